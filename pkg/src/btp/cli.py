"""Command-line driver: one subcommand per pipeline phase.

Configuration lives in a single JSON document; every field is mirrored by
a dotted flag (flags win).  All randomness flows from the one master seed
through tagged derivation (see seeds.derive_seed), so any command rerun
with the same inputs and seed reproduces its outputs byte for byte.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import report
from .beam import sample_phase
from .config import RunConfig, default_config, load_config
from .harness import SubprocessRunner, ToyRunner, load_tasks, test_phase
from .replay import ReplayBuffer, p2values, priorities, sampling_distribution
from .seeds import derive_seed
from .toylm import ToyLM
from .trainer import (
    DEFAULT_ALPHA_GRID,
    DEFAULT_K_GRID,
    btp_loop,
    build_minibatch,
    export_jsonl,
    sweep_alpha,
    sweep_k,
)

logger = logging.getLogger(__name__)


class ConfigProblems(Exception):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


_OVERRIDE_SPECS: list[tuple[str, type]] = [
    ("beam.k", int),
    ("beam.max_len", int),
    ("priority.mix_weight", float),
    ("priority.prioritization_exponent", float),
    ("priority.scheme", str),
    ("loop.iterations", int),
    ("loop.minibatch_size", int),
    ("loop.update_weight", float),
    ("loop.buffer_capacity", int),
    ("runner.kind", str),
    ("runner.command_template", str),
    ("runner.timeout_s", float),
    ("runner.output_cap_bytes", int),
    ("model.order", int),
    ("model.smoothing", float),
    ("model.path", str),
    ("paths.tasks", str),
    ("paths.eval_tasks", str),
    ("paths.buffer", str),
    ("paths.batch_out", str),
    ("paths.metrics_out", str),
    ("paths.model_out", str),
]


def _dest(name: str) -> str:
    return name.replace(".", "__")


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its fields")
    common.add_argument("--seed", type=int, help="master seed for all derived RNG streams")
    common.add_argument("--workers", type=int, help="max parallel test executions")
    common.add_argument("--tasks", help="shorthand for --paths.tasks")
    common.add_argument("--buffer", help="shorthand for --paths.buffer")
    common.add_argument("--eval-tasks", help="shorthand for --paths.eval_tasks")
    for name, typ in _OVERRIDE_SPECS:
        common.add_argument(f"--{name}", type=typ, dest=_dest(name), metavar="V",
                            help=f"override config field {name}")
    return common


def _resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else default_config()
    for name, _ in _OVERRIDE_SPECS:
        value = getattr(args, _dest(name), None)
        if value is not None:
            section, field_name = name.split(".")
            setattr(getattr(config, section), field_name, value)
    if args.seed is not None:
        config.seed = args.seed
    if args.workers is not None:
        config.workers = args.workers
    if args.tasks:
        config.paths.tasks = args.tasks
    if args.buffer:
        config.paths.buffer = args.buffer
    if args.eval_tasks:
        config.paths.eval_tasks = args.eval_tasks
    return config


def _validated(args, required_paths: tuple[str, ...] = (),
               input_paths: tuple[str, ...] = ()) -> RunConfig:
    """Resolve config + flags; report every violation before running.

    ``required_paths`` must be configured; ``input_paths`` must also
    resolve to existing files at command start.
    """
    config = _resolve_config(args)
    problems = config.validate()
    for name in required_paths:
        if getattr(config.paths, name) is None:
            problems.append(f"paths.{name}: required by this command")
    for name in input_paths:
        value = getattr(config.paths, name)
        if value is not None and not Path(value).exists():
            problems.append(f"paths.{name}: file not found: {value}")
    if config.model.path and not Path(config.model.path).exists():
        problems.append(f"model.path: file not found: {config.model.path}")
    if problems:
        raise ConfigProblems(problems)
    return config


def _runner(config: RunConfig):
    if config.runner.kind == "toy":
        return ToyRunner()
    return SubprocessRunner(config.runner.command_template,
                            timeout_s=config.runner.timeout_s,
                            output_cap_bytes=config.runner.output_cap_bytes)


def _model(config: RunConfig) -> ToyLM:
    if config.model.path:
        return ToyLM.load(config.model.path)
    return ToyLM(order=config.model.order, smoothing=config.model.smoothing)


def _load_buffer(config: RunConfig, create_if_missing: bool = False) -> ReplayBuffer:
    path = config.paths.buffer
    if path and Path(path).exists():
        return ReplayBuffer.load(path)
    if create_if_missing:
        return ReplayBuffer(capacity=config.loop.buffer_capacity, rng_seed=config.seed)
    raise FileNotFoundError(f"buffer file not found: {path}")


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _base_path(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix else p


# -- subcommands ----------------------------------------------------------


def cmd_sample(args) -> int:
    config = _validated(args, required_paths=("tasks", "buffer"), input_paths=("tasks",))
    tasks = load_tasks(config.paths.tasks)
    model = _model(config)
    buffer = _load_buffer(config, create_if_missing=True)
    phase = sample_phase(model, tasks, config.beam_config(), buffer)
    buffer.save(config.paths.buffer)
    print(f"inserted {phase.inserted} candidates from {len(tasks)} tasks "
          f"into {config.paths.buffer}")
    if phase.failures:
        for task_id, message in phase.failures:
            print(f"task {task_id!r} failed: {message}", file=sys.stderr)
        return 1
    return 0


def cmd_test(args) -> int:
    config = _validated(args, required_paths=("tasks", "buffer"),
                        input_paths=("tasks", "buffer"))
    tasks = load_tasks(config.paths.tasks)
    buffer = _load_buffer(config)
    phase = test_phase(buffer, tasks, _runner(config), config.workers)
    buffer.save(config.paths.buffer)
    print(f"annotated {phase.annotated} of {len(buffer)} entries in {config.paths.buffer}")
    for index, reason in phase.untestable:
        print(f"entry {index} untestable: {reason}", file=sys.stderr)
    return 0


def cmd_export(args) -> int:
    config = _validated(args, required_paths=("tasks", "buffer", "batch_out"),
                        input_paths=("tasks", "buffer"))
    tasks = load_tasks(config.paths.tasks)
    buffer = _load_buffer(config)
    batch = build_minibatch(buffer, tasks, config.priority_config(),
                            config.loop.minibatch_size,
                            derive_seed(config.seed, "export"))
    export_jsonl(batch, config.paths.batch_out)
    print(f"exported {len(batch.records)} records to {config.paths.batch_out}")
    return 0


def _loop_text(result) -> str:
    header = ["iteration", "mean_pass_rate", "accuracy_rate", "mean_p2value", "buffer_size"]
    rows = []
    for m in [result.baseline] + result.history:
        p2 = "-" if m.mean_p2value is None else f"{m.mean_p2value:.4f}"
        rows.append([str(m.iteration), f"{m.mean_pass_rate:.4f}",
                     f"{m.accuracy_rate:.4f}", p2, str(m.buffer_size)])
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in rows]
    return "\n".join(lines) + "\n"


def cmd_loop(args) -> int:
    config = _validated(args, required_paths=("tasks", "metrics_out"),
                        input_paths=("tasks", "eval_tasks"))
    tasks = load_tasks(config.paths.tasks)
    eval_tasks = (load_tasks(config.paths.eval_tasks)
                  if config.paths.eval_tasks else tasks)
    model = _model(config)
    result = btp_loop(model, tasks, eval_tasks, config.loop_config(),
                      seed=config.seed, runner=_runner(config), workers=config.workers)

    _write_json(config.paths.metrics_out, result.to_json_dict())
    base = _base_path(config.paths.metrics_out)
    _write_text(base.with_suffix(".txt"), _loop_text(result))
    if not args.no_figures:
        report.save_loop_figure(result, base.with_suffix(".png"))
    if config.paths.buffer:
        result.buffer.save(config.paths.buffer)
    if config.paths.model_out:
        model.save(config.paths.model_out)
    if config.paths.batch_out and result.last_minibatch is not None:
        export_jsonl(result.last_minibatch, config.paths.batch_out)

    if result.error is not None:
        print(json.dumps({"error": result.error}), file=sys.stderr)
        return 1
    final = result.history[-1]
    print(f"completed {len(result.history)} iterations; "
          f"mean best-of-{config.beam.k} pass rate "
          f"{result.baseline.mean_pass_rate:.4f} -> {final.mean_pass_rate:.4f}; "
          f"metrics in {config.paths.metrics_out}")
    return 0


def _parse_grid(text: str, typ):
    try:
        return [typ(part.strip()) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigProblems([f"grid: {exc}"]) from None


def _run_sweep_command(args, parameter: str) -> int:
    config = _validated(args, required_paths=("tasks",),
                        input_paths=("tasks", "eval_tasks"))
    out = args.out or config.paths.metrics_out
    if out is None:
        raise ConfigProblems(["paths.metrics_out: required (or pass --out)"])
    tasks = load_tasks(config.paths.tasks)
    eval_tasks = (load_tasks(config.paths.eval_tasks)
                  if config.paths.eval_tasks else tasks)
    model = _model(config)
    runner = _runner(config)
    if parameter == "k":
        grid = _parse_grid(args.grid, int) if args.grid else list(DEFAULT_K_GRID)
        table = sweep_k(model, tasks, eval_tasks, grid, config.loop_config(),
                        seed=config.seed, runner=runner, workers=config.workers)
    else:
        grid = _parse_grid(args.grid, float) if args.grid else list(DEFAULT_ALPHA_GRID)
        table = sweep_alpha(model, tasks, eval_tasks, grid, config.loop_config(),
                            seed=config.seed, runner=runner, workers=config.workers)
    _write_json(out, table.to_json_dict())
    base = _base_path(out)
    _write_text(base.with_suffix(".txt"), table.to_text())
    if not args.no_figures:
        report.save_sweep_figure(table, base.with_suffix(".png"))
    print(table.to_text(), end="")
    print(f"table written to {out}")
    return 0


def cmd_sweep_k(args) -> int:
    return _run_sweep_command(args, "k")


def cmd_sweep_alpha(args) -> int:
    return _run_sweep_command(args, "alpha")


def cmd_stats(args) -> int:
    config = _validated(args, required_paths=("buffer",), input_paths=("buffer",))
    buffer = _load_buffer(config)
    print(f"buffer size: {len(buffer)} (capacity "
          f"{buffer.capacity if buffer.capacity is not None else 'unbounded'}, "
          f"version {buffer.version})")
    tested = buffer.tested_entries()
    untested = len(buffer) - len(tested)
    if untested:
        print(f"untested entries: {untested}")
    payload = {"size": len(buffer), "untested": untested}
    if tested:
        priority_config = config.priority_config()
        scores = p2values(tested, priority_config.mix_weight)
        edges = [i / 10 for i in range(11)]
        counts = [int(((scores >= lo) & (scores < hi)).sum())
                  for lo, hi in zip(edges[:-1], edges[1:])]
        counts[-1] += int((scores == 1.0).sum())
        print("priority score histogram (10 bins over [0, 1]):")
        for (lo, hi), count in zip(zip(edges[:-1], edges[1:]), counts):
            bar = "#" * count
            print(f"  [{lo:.1f}, {hi:.1f}) {count:4d} {bar}")
        payload["histogram"] = {"edges": edges, "counts": counts}
        if untested == 0:
            probs = sampling_distribution(priorities(buffer, priority_config),
                                          priority_config.prioritization_exponent)
            print("exact sampling distribution "
                  f"(scheme={priority_config.scheme.value}, "
                  f"exponent={priority_config.prioritization_exponent:g}):")
            for entry, score, prob in zip(buffer, scores, probs):
                print(f"  entry {entry.insertion_index:6d}  score {score:.6f}  "
                      f"P {prob:.6f}  task {entry.task_id}")
            payload["distribution"] = [
                {"insertion_index": e.insertion_index, "score": float(s), "probability": float(p)}
                for e, s, p in zip(buffer, scores, probs)
            ]
        else:
            print("sampling distribution unavailable: buffer has untested entries")
        if args.figure:
            report.save_score_histogram(scores, args.figure)
    if args.json:
        _write_json(args.json, payload)
    return 0


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="btp",
        description="Beam-search sampling, pass-rate testing, and prioritized "
                    "experience replay for fine-tuning data curation.")
    common = _common_parser()
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", parents=[common],
                       help="decode candidates for every task into the buffer")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("test", parents=[common],
                       help="annotate buffer entries with pass rates")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("export", parents=[common],
                       help="draw a prioritized minibatch and write JSONL")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("loop", parents=[common],
                       help="run the full sample/test/replay loop")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    p.set_defaults(func=cmd_loop)

    p = sub.add_parser("sweep-k", parents=[common],
                       help="pass-rate table across beam widths")
    p.add_argument("--grid", help="comma-separated beam widths (default 1..10)")
    p.add_argument("--out", help="output table path (default paths.metrics_out)")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    p.set_defaults(func=cmd_sweep_k)

    p = sub.add_parser("sweep-alpha", parents=[common],
                       help="pass-rate table across priority mix weights")
    p.add_argument("--grid", help="comma-separated mix weights (default 0..1 step 0.05)")
    p.add_argument("--out", help="output table path (default paths.metrics_out)")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("stats", parents=[common],
                       help="buffer size, score histogram, exact sampling distribution")
    p.add_argument("--json", help="also write the stats as JSON to this path")
    p.add_argument("--figure", help="render the score histogram to this path")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigProblems as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except Exception as exc:  # structured report, nonzero exit
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
