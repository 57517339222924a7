"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
Statistical checks use fixed seeds so the suite is deterministic.
"""

import json
import math
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.stats

from conftest import enumerate_ranked, make_entry, seeded_corpus_model, toy_corpus

from btp.beam import BeamConfig, beam_search
from btp.cli import main
from btp.config import default_config
from btp.harness import (
    SubprocessRunner,
    TestCase,
    ToyRunner,
    pass_rate,
    save_tasks,
    tasks_by_id,
)
from btp.replay import (
    PrefixSumSampler,
    PriorityConfig,
    PriorityScheme,
    ReplayBuffer,
    p2value,
    priorities,
    sample,
    sampling_distribution,
)
from btp.seeds import derive_seed
from btp.toylm import EOS_TOKEN, ToyLM
from btp.trainer import LoopConfig, btp_loop


def _report(number: int, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    assert ok, f"criterion {number} failed: {detail}"


def test_criterion_1_beam_oracle_equivalence():
    """Full-width beam output equals exhaustive enumeration exactly."""
    started = time.perf_counter()
    rng = np.random.default_rng(20260810)
    letters = ("a", "b", "c", "d", "e")
    sizes = []
    while len(sizes) < 100:
        v = int(rng.integers(2, 6))
        max_len = int(rng.integers(2, 7))
        if v ** (max_len + 1) <= 6000:
            sizes.append((v, max_len))
    sizes += [(4, 6), (5, 6)]  # boundary of the allowed box

    mismatches = 0
    for i, (v, max_len) in enumerate(sizes):
        vocab = letters[:v] + (EOS_TOKEN,)
        model = ToyLM.randomized(vocab, order=2, smoothing=float(rng.uniform(0.5, 2.0)),
                                 seed=i, updates=int(rng.integers(5, 25)))
        ranked = enumerate_ranked(model, "", max_len)
        hyps = beam_search(model, "", BeamConfig(k=len(ranked), max_len=max_len))
        if len(hyps) != len(ranked):
            mismatches += 1
            continue
        for hyp, (logprob, _, tokens) in zip(hyps, ranked):
            if hyp.tokens != tokens or abs(hyp.cum_logprob - logprob) > 1e-9:
                mismatches += 1
                break
    elapsed = time.perf_counter() - started
    _report(1, mismatches == 0 and elapsed < 10.0,
            f"beam == enumeration top-k on {len(sizes)} randomized models "
            f"(|vocab|<=5, max_len<=6), {mismatches} mismatches, {elapsed:.2f}s < 10s")


def test_criterion_2_distribution_fidelity():
    """Empirical draw frequencies pass chi-square GOF at significance 0.01."""
    started = time.perf_counter()
    rng = np.random.default_rng(4242)
    n_draws = 100_000
    failures = []
    cases = 0
    for n in (2, 3, 5, 8, 13, 21, 34, 50):
        for beta in (0.0, 0.5, 1.0, 2.0):
            priority_values = rng.uniform(0.05, 1.0, size=n)
            probs = sampling_distribution(priority_values, beta)
            draws = PrefixSumSampler(probs).draw(
                np.random.default_rng(derive_seed(4242, f"gof/{cases}")), n_draws)
            counts = np.bincount(draws, minlength=n)
            expected = n_draws * probs
            statistic = float(((counts - expected) ** 2 / expected).sum())
            critical = float(scipy.stats.chi2.ppf(0.99, df=n - 1))
            if statistic >= critical:
                failures.append((n, beta, statistic, critical))
            cases += 1

    # priorities [3, 1] at exponent 1: first-entry frequency within 0.75 +- 0.01
    buffer = ReplayBuffer()
    buffer.insert(make_entry(prob=0.5, pass_rate=0.75, index=0))
    buffer.insert(make_entry(prob=0.5, pass_rate=0.25, index=1))
    config = PriorityConfig(0.0, 1.0, PriorityScheme.PROPORTIONAL)
    drawn = sample(buffer, config, n_draws, seed=77)
    frequency = sum(1 for e in drawn if e.insertion_index == 0) / n_draws
    freq_ok = abs(frequency - 0.75) <= 0.01

    elapsed = time.perf_counter() - started
    _report(2, not failures and freq_ok and elapsed < 5.0,
            f"chi-square GOF passed {cases - len(failures)}/{cases} cases at 0.01; "
            f"[3,1] frequency {frequency:.4f} in 0.75+-0.01; {elapsed:.2f}s < 5s")


def test_criterion_3_priority_arithmetic():
    """Mixed-score and rank-priority values match exact-fraction recomputation."""
    rng = np.random.default_rng(333)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 9))
        probs = [Fraction(int(rng.integers(1, 33)), 32) for _ in range(n)]
        rates = [Fraction(int(rng.integers(0, 33)), 32) for _ in range(n)]
        alpha = Fraction(int(rng.integers(0, 21)), 20)

        buffer = ReplayBuffer()
        for i, (p, r) in enumerate(zip(probs, rates)):
            buffer.insert(make_entry(prob=float(p), pass_rate=float(r), index=i))

        # independent oracle: exact rational arithmetic
        exact_scores = [alpha * p + (1 - alpha) * r for p, r in zip(probs, rates)]
        order = sorted(range(n), key=lambda i: (-exact_scores[i], i))
        exact_rank_priority = [Fraction(0)] * n
        for rank0, i in enumerate(order):
            exact_rank_priority[i] = Fraction(1, rank0 + 1)

        for i, entry in enumerate(buffer):
            worst = max(worst, abs(p2value(entry, float(alpha)) - float(exact_scores[i])))
        computed = priorities(buffer, PriorityConfig(float(alpha), 1.0, PriorityScheme.RANK))
        for i in range(n):
            worst = max(worst, abs(computed[i] - float(exact_rank_priority[i])))
    _report(3, worst <= 1e-12,
            f"50-case table: worst deviation {worst:.2e} <= 1e-12")


def test_criterion_4_pass_rate_exactness(tmp_path):
    """Pass rates equal hand-computed fractions bit-exactly on 20 programs."""
    toy = ToyRunner()
    sub = SubprocessRunner(f"{sys.executable} {{file}}", timeout_s=0.8)

    def T(x, out):
        return TestCase(f"x={x}", out)

    # (program, tests, hand-computed passing count, runner)
    fixtures = [
        ("x 2 *", [T(3, "6"), T(5, "10"), T(4, "9")], 2, toy),
        ("x", [T(0, "0"), T(7, "7")], 2, toy),
        ("x 1 +", [T(1, "2"), T(2, "4"), T(9, "10"), T(0, "1")], 3, toy),
        ("7", [T(1, "7"), T(2, "8")], 1, toy),
        ("* *", [T(1, "1"), T(2, "")], 0, toy),
        ("x x +", [T(2, "4"), T(3, "6"), T(5, "10"), T(1, "3")], 3, toy),
        ("x x *", [T(3, "9"), T(4, "16")], 2, toy),
        ("x 3 -", [T(5, "2"), T(0, "-3"), T(2, "1")], 2, toy),
        ("9 x -", [T(4, "5"), T(10, "-1")], 2, toy),
        ("x 2 * 1 +", [T(3, "7"), T(0, "1"), T(4, "8")], 2, toy),
        ("x y +", [T(1, "2")], 0, toy),
        ("", [T(1, "0")], 0, toy),
        ("1 2", [T(1, "2")], 0, toy),
        ("x 0 *", [T(5, "0"), T(9, "0"), T(0, "0")], 3, toy),
        ("2 3 * 4 +", [T(1, "10"), T(2, "10"), T(3, "11")], 2, toy),
        ("x 5 + 2 *", [T(1, "12"), T(2, "14"), T(3, "61")], 2, toy),
        ("x 1 - x *", [T(2, "2"), T(3, "6"), T(4, "12"), T(5, "19")], 3, toy),
        ("import sys\nsys.stdout.write(sys.stdin.read())",
         [TestCase("ok\n", "ok"), TestCase("x\n", "x")], 2, sub),
        ("import sys\nsys.exit(2)", [TestCase("", "")], 0, sub),
        ("import time\ntime.sleep(30)\nprint('late')", [TestCase("", "late")], 0, sub),
    ]
    assert len(fixtures) == 20
    bad = []
    for program, tests, passing, runner in fixtures:
        expected = passing / len(tests)
        actual = pass_rate(program, tests, runner)
        if actual != expected:
            bad.append((program, expected, actual))
    _report(4, not bad,
            f"20-program fixture bit-exact (timeout and crash count as failures); "
            f"{len(bad)} mismatches")


def test_criterion_5_closed_loop_lift():
    """Five loop iterations strictly lift every minibatch sequence and never
    lower the mean best-of-k eval pass rate."""
    started = time.perf_counter()
    tasks, programs = toy_corpus(10)
    model = seeded_corpus_model(tasks, programs, weight=8.0)
    beam = BeamConfig(k=3, max_len=6)

    # precondition: some beam candidate passes every test of every task
    runner = ToyRunner()
    solvable = all(
        any(pass_rate(" ".join(t for t in h.tokens if t != EOS_TOKEN),
                      task.tests, runner) == 1.0
            for h in beam_search(model, task.prompt, beam))
        for task in tasks
    )
    assert solvable, "fixture precondition broken: some task has no passing candidate"

    config = LoopConfig(iterations=5, beam=beam,
                        priority=PriorityConfig(0.5, 1.0, PriorityScheme.RANK),
                        minibatch_size=16)
    result = btp_loop(model, tasks, tasks, config, seed=2026)
    lifts_ok = all(m.min_update_lift is not None and m.min_update_lift > 0
                   for m in result.history)
    rate_ok = result.history[-1].mean_pass_rate >= result.baseline.mean_pass_rate
    elapsed = time.perf_counter() - started
    _report(5, result.error is None and len(result.history) == 5
            and lifts_ok and rate_ok and elapsed < 60.0,
            f"10-task corpus, 5 iterations: every update lifted its sequence "
            f"(min lift {min(m.min_update_lift for m in result.history):.3e}), eval "
            f"{result.baseline.mean_pass_rate:.3f} -> "
            f"{result.history[-1].mean_pass_rate:.3f}, {elapsed:.1f}s < 60s")


def test_criterion_6_sweep_tables(tmp_path):
    """Sweep commands emit row-per-value, column-per-group tables; default k=3."""
    tasks, programs = toy_corpus(6, grouped=True)
    tasks_path = tmp_path / "tasks.json"
    save_tasks(tasks, tasks_path)
    model_path = tmp_path / "model.json"
    seeded_corpus_model(tasks, programs).save(model_path)
    groups = sorted({t.group for t in tasks})

    common = ["--tasks", str(tasks_path), "--model.path", str(model_path),
              "--seed", "6", "--beam.max_len", "6",
              "--loop.iterations", "1", "--loop.minibatch_size", "6",
              "--no-figures"]
    k_out = tmp_path / "sweep_k.json"
    code_k = main(["sweep-k", "--grid", ",".join(str(k) for k in range(1, 11)),
                   "--out", str(k_out), *common])
    alpha_out = tmp_path / "sweep_alpha.json"
    code_a = main(["sweep-alpha", "--out", str(alpha_out), *common])

    k_table = json.loads(k_out.read_text())
    a_table = json.loads(alpha_out.read_text())
    k_ok = (code_k == 0
            and [r["value"] for r in k_table["rows"]] == list(range(1, 11))
            and k_table["groups"] == groups
            and all(set(r["cells"]) == set(groups) for r in k_table["rows"])
            and all(0.0 <= c <= 1.0 for r in k_table["rows"] for c in r["cells"].values()))
    alpha_values = [r["value"] for r in a_table["rows"]]
    a_ok = (code_a == 0 and len(alpha_values) == 21
            and alpha_values[0] == 0.0 and alpha_values[-1] == 1.0
            and all(abs(b - a - 0.05) < 1e-9 for a, b in zip(alpha_values, alpha_values[1:]))
            and all(0.0 <= c <= 1.0 for r in a_table["rows"] for c in r["cells"].values()))
    default_k_ok = default_config().beam.k == 3
    _report(6, k_ok and a_ok and default_k_ok,
            f"sweep-k rows 1..10 and sweep-alpha 21-value grid over groups {groups}; "
            f"all cells in [0,1]; shipped default beam width k=3")


def test_criterion_7_determinism_and_persistence(tmp_path):
    """Identical seeds give byte-identical buffers, minibatches, and metrics."""
    tasks, programs = toy_corpus(3)
    tasks_path = tmp_path / "tasks.json"
    save_tasks(tasks, tasks_path)
    model_path = tmp_path / "model.json"
    seeded_corpus_model(tasks, programs).save(model_path)

    def run(into: Path) -> None:
        into.mkdir()
        base = ["--tasks", str(tasks_path), "--model.path", str(model_path),
                "--seed", "99"]
        phase = base + ["--buffer", str(into / "buffer.ndjson")]
        assert main(["sample", *phase]) == 0
        assert main(["test", *phase]) == 0
        assert main(["export", *phase, "--paths.batch_out", str(into / "batch.jsonl"),
                     "--loop.minibatch_size", "8"]) == 0
        assert main(["loop", *base, "--loop.iterations", "2",
                     "--loop.minibatch_size", "8", "--no-figures",
                     "--paths.metrics_out", str(into / "metrics.json"),
                     "--paths.buffer", str(into / "loop_buffer.ndjson"),
                     "--paths.batch_out", str(into / "loop_batch.jsonl")]) == 0

    run(tmp_path / "first")
    run(tmp_path / "second")
    artifacts = ["buffer.ndjson", "batch.jsonl", "metrics.json", "metrics.txt",
                 "loop_buffer.ndjson", "loop_batch.jsonl"]
    differing = [name for name in artifacts
                 if (tmp_path / "first" / name).read_bytes()
                 != (tmp_path / "second" / name).read_bytes()]

    saved = ReplayBuffer.load(tmp_path / "first" / "buffer.ndjson")
    round_trip_path = tmp_path / "round_trip.ndjson"
    saved.save(round_trip_path)
    round_trip_ok = (ReplayBuffer.load(round_trip_path) == saved
                     and round_trip_path.read_bytes()
                     == (tmp_path / "first" / "buffer.ndjson").read_bytes())
    _report(7, not differing and round_trip_ok,
            f"two seeded runs byte-identical across {len(artifacts)} artifacts "
            f"(differing: {differing or 'none'}); buffer persist/load bit-exact")


def test_criterion_8_sampling_invariants():
    """Strict monotonicity, non-starvation, and rank order-invariance over
    at least ten thousand random buffer configurations."""
    rng = np.random.default_rng(88)
    configurations = 0
    violations = []

    for _ in range(8000):
        n = int(rng.integers(2, 31))
        scores = rng.uniform(1e-4, 1.0, size=n)
        beta = float(rng.choice([0.0, 0.3, 1.0, 2.0, float(rng.uniform(0.05, 3.0))]))
        scheme = PriorityScheme.PROPORTIONAL if rng.random() < 0.5 else PriorityScheme.RANK
        buffer = ReplayBuffer()
        for i, s in enumerate(scores):
            buffer.insert(make_entry(prob=0.5, pass_rate=float(s), index=i))
        config = PriorityConfig(0.0, beta, scheme)
        priority_values = priorities(buffer, config)
        dist = sampling_distribution(priority_values, beta)
        if not np.all(dist > 0):
            violations.append(("non-starvation", n, beta, scheme))
        if beta > 0:
            order = np.argsort(priority_values)
            sorted_p = priority_values[order]
            sorted_d = dist[order]
            strict = sorted_p[1:] > sorted_p[:-1]
            if not np.all(sorted_d[1:][strict] > sorted_d[:-1][strict]):
                violations.append(("monotonicity", n, beta, scheme))
        configurations += 1

    for _ in range(2000):
        n = int(rng.integers(2, 31))
        base_scores = np.sort(rng.uniform(0.01, 1.0, size=n))[::-1]
        beta = float(rng.uniform(0.0, 3.0))
        config = PriorityConfig(0.0, beta, PriorityScheme.RANK)

        def dist_for(values):
            buffer = ReplayBuffer()
            for i, s in enumerate(values):
                buffer.insert(make_entry(prob=0.5, pass_rate=float(s), index=i))
            return sampling_distribution(priorities(buffer, config), beta)

        # order-preserving perturbation leaves the rank distribution unchanged
        scale = float(rng.uniform(0.05, 0.95))
        if not np.array_equal(dist_for(base_scores), dist_for(base_scores * scale)):
            violations.append(("rank-order-invariance", n, beta, PriorityScheme.RANK))
        configurations += 1

    _report(8, configurations >= 10_000 and not violations,
            f"{configurations} random buffer configurations; "
            f"violations: {violations[:3] or 'none'}")
