"""Testing phase: run candidate programs against per-task test sets.

The pass rate of a program is the number of passing test cases divided by
the number of test cases, so it always lands in [0, 1] and can be mixed
linearly with a probability.  Timeouts and crashes count as failed tests,
not as phase errors; the phase itself never aborts on a bad program.

Output comparison follows judge convention: exact string match after
stripping trailing whitespace on each line and trailing newlines.
"""

import enum
import json
import shlex
import subprocess
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import toylang
from .errors import ToyProgramError


class Status(str, enum.Enum):
    PASS = "pass"
    WRONG_OUTPUT = "wrong_output"
    RUNTIME_ERROR = "runtime_error"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest class despite the name

    input: str
    expected_output: str


@dataclass(frozen=True)
class CodeTask:
    """A generation task: prompt plus the test set it is judged against."""

    task_id: str
    prompt: str
    tests: tuple[TestCase, ...]
    language_tag: str = "toy"
    group: str = "all"

    def __post_init__(self):
        if self.language_tag not in ("toy", "external"):
            raise ValueError(f"language_tag must be 'toy' or 'external', got {self.language_tag!r}")
        object.__setattr__(self, "tests", tuple(self.tests))


@dataclass(frozen=True)
class ExecutionResult:
    status: Status
    observed_output: str
    duration_ms: float


def normalize_output(text: str) -> str:
    lines = [line.rstrip() for line in text.splitlines()]
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines)


class ToyRunner:
    """Interprets postfix toy programs; fully deterministic.

    duration_ms is pinned to 0.0 so identical (program, test) pairs give
    identical ExecutionResults across runs and thread schedules.
    """

    language_tag = "toy"

    def run(self, program_text: str, test: TestCase) -> ExecutionResult:
        try:
            x = toylang.parse_binding(test.input)
            value = toylang.run_program(program_text, x)
        except ToyProgramError:
            return ExecutionResult(Status.RUNTIME_ERROR, "", 0.0)
        observed = str(value)
        if normalize_output(observed) == normalize_output(test.expected_output):
            return ExecutionResult(Status.PASS, observed, 0.0)
        return ExecutionResult(Status.WRONG_OUTPUT, observed, 0.0)


class SubprocessRunner:
    """Runs program text through an external command, judge style.

    The program is written to a temp file and the command template is
    expanded with ``{file}``; the test input goes to stdin and observed
    output is read from stdout, capped at ``output_cap_bytes``.  Once the
    cap is hit the runner stops reading, so a runaway printer blocks on a
    full pipe and is reaped by the wall-clock timeout.
    """

    language_tag = "external"

    def __init__(self, command_template: str, timeout_s: float = 5.0,
                 output_cap_bytes: int = 64 * 1024):
        if "{file}" not in command_template:
            raise ValueError("command_template must contain a {file} placeholder")
        if timeout_s <= 0:
            raise ValueError(f"timeout_s must be > 0, got {timeout_s}")
        self.command_template = command_template
        self.timeout_s = timeout_s
        self.output_cap_bytes = output_cap_bytes

    def run(self, program_text: str, test: TestCase) -> ExecutionResult:
        with tempfile.NamedTemporaryFile("w", suffix=".prog", delete=False,
                                         encoding="utf-8") as tmp:
            tmp.write(program_text)
            path = tmp.name
        try:
            return self._execute(path, test)
        finally:
            Path(path).unlink(missing_ok=True)

    def _execute(self, path: str, test: TestCase) -> ExecutionResult:
        args = shlex.split(self.command_template.format(file=shlex.quote(path)))
        started = time.perf_counter()
        proc = subprocess.Popen(args, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                stderr=subprocess.DEVNULL)
        chunks: list[bytes] = []

        def _feed():
            try:
                proc.stdin.write(test.input.encode("utf-8"))
                proc.stdin.close()
            except (BrokenPipeError, OSError):
                pass

        def _drain():
            remaining = self.output_cap_bytes + 1
            while remaining > 0:
                chunk = proc.stdout.read(min(8192, remaining))
                if not chunk:
                    return
                chunks.append(chunk)
                remaining -= len(chunk)

        feeder = threading.Thread(target=_feed, daemon=True)
        drainer = threading.Thread(target=_drain, daemon=True)
        feeder.start()
        drainer.start()
        timed_out = False
        try:
            proc.wait(timeout=self.timeout_s)
        except subprocess.TimeoutExpired:
            timed_out = True
            proc.kill()
            proc.wait()
        drainer.join(timeout=1.0)
        feeder.join(timeout=1.0)
        duration_ms = (time.perf_counter() - started) * 1000.0
        observed = b"".join(chunks)[: self.output_cap_bytes].decode("utf-8", errors="replace")
        if timed_out:
            return ExecutionResult(Status.TIMEOUT, observed, duration_ms)
        if proc.returncode != 0:
            return ExecutionResult(Status.RUNTIME_ERROR, observed, duration_ms)
        if normalize_output(observed) == normalize_output(test.expected_output):
            return ExecutionResult(Status.PASS, observed, duration_ms)
        return ExecutionResult(Status.WRONG_OUTPUT, observed, duration_ms)


def run_one(program_text: str, test: TestCase, runner) -> ExecutionResult:
    return runner.run(program_text, test)


def pass_rate(program_text: str, tests, runner, workers: int | None = None) -> float:
    """Fraction of test cases the program passes (failures of any kind count)."""
    tests = list(tests)
    if not tests:
        raise ValueError("no tests")
    results = _run_all(((program_text, test) for test in tests), runner, workers)
    passed = sum(1 for r in results if r.status is Status.PASS)
    return passed / len(tests)


def _run_all(jobs, runner, workers: int | None):
    jobs = list(jobs)
    if workers is not None and workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda job: runner.run(*job), jobs))
    return [runner.run(program, test) for program, test in jobs]


@dataclass
class TestPhaseReport:
    annotated: int
    untestable: list[tuple[int, str]]


def test_phase(buffer, tasks, runner, workers: int | None = None) -> TestPhaseReport:
    """Annotate every buffer entry with its pass rate.

    Entries whose task_id cannot be resolved (or whose task has no tests)
    are flagged untestable and left unannotated; everything else proceeds.
    Re-running with a deterministic runner reproduces the annotations.
    """
    task_map = tasks_by_id(tasks) if not isinstance(tasks, dict) else tasks
    report = TestPhaseReport(annotated=0, untestable=[])
    testable: list[tuple[int, CodeTask]] = []
    jobs: list[tuple[str, TestCase]] = []
    spans: list[tuple[int, int]] = []
    for position, entry in enumerate(buffer.entries):
        task = task_map.get(entry.task_id)
        if task is None:
            report.untestable.append((entry.insertion_index, f"unknown task_id {entry.task_id!r}"))
            continue
        if not task.tests:
            report.untestable.append((entry.insertion_index, f"task {entry.task_id!r} has no tests"))
            continue
        start = len(jobs)
        jobs.extend((entry.program_text, test) for test in task.tests)
        spans.append((start, len(jobs)))
        testable.append((position, task))
    results = _run_all(jobs, runner, workers)
    for (position, task), (start, stop) in zip(testable, spans):
        passed = sum(1 for r in results[start:stop] if r.status is Status.PASS)
        buffer.set_pass_rate(position, passed / len(task.tests))
        report.annotated += 1
    return report


test_phase.__test__ = False  # not a pytest function despite the name


def tasks_by_id(tasks) -> dict[str, CodeTask]:
    mapping: dict[str, CodeTask] = {}
    for task in tasks:
        if task.task_id in mapping:
            raise ValueError(f"duplicate task_id {task.task_id!r}")
        mapping[task.task_id] = task
    return mapping


def load_tasks(path) -> list[CodeTask]:
    """Read a task file: JSON array of task objects.

    Required fields: task_id, prompt, language_tag, tests (each test an
    object with input and expected_output).  Optional: group, used to
    bucket tasks into sweep-table columns.
    """
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise ValueError("task file must be a JSON array")
    tasks = []
    for i, raw in enumerate(data):
        if not isinstance(raw, dict):
            raise ValueError(f"task #{i} is not an object")
        missing = {"task_id", "prompt", "language_tag", "tests"} - set(raw)
        if missing:
            raise ValueError(f"task #{i} missing fields {sorted(missing)}")
        unknown = set(raw) - {"task_id", "prompt", "language_tag", "tests", "group"}
        if unknown:
            raise ValueError(f"task #{i} has unknown fields {sorted(unknown)}")
        tests = []
        for j, t in enumerate(raw["tests"]):
            if not isinstance(t, dict) or set(t) != {"input", "expected_output"}:
                raise ValueError(f"task #{i} test #{j} must have exactly input/expected_output")
            tests.append(TestCase(input=t["input"], expected_output=t["expected_output"]))
        tasks.append(CodeTask(
            task_id=raw["task_id"],
            prompt=raw["prompt"],
            tests=tuple(tests),
            language_tag=raw["language_tag"],
            group=raw.get("group", "all"),
        ))
    tasks_by_id(tasks)  # uniqueness check
    return tasks


def save_tasks(tasks, path) -> None:
    payload = []
    for task in tasks:
        payload.append({
            "task_id": task.task_id,
            "prompt": task.prompt,
            "language_tag": task.language_tag,
            "group": task.group,
            "tests": [{"input": t.input, "expected_output": t.expected_output}
                      for t in task.tests],
        })
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
