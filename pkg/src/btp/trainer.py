"""Replay-driven fine-tuning: minibatch construction, batch export, the
closed generate/test/replay loop on the built-in toy model, and the
hyperparameter sweep procedures.

Real fine-tuning of transformer weights is out of scope; the loop instead
applies weighted count updates to the toy model and exports every
minibatch as JSONL for external trainers.  Duplicated draws are kept:
each occurrence applies its own update, so multiplicity is the weight.
"""

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .beam import BeamConfig, beam_search, sample_phase
from .harness import ToyRunner, pass_rate, tasks_by_id, test_phase
from .replay import (
    PriorityConfig,
    ReplayBuffer,
    build_entry_pool,
    draw_indices,
    p2values,
    sample,
)
from .seeds import derive_seed

logger = logging.getLogger(__name__)

DEFAULT_K_GRID = tuple(range(1, 11))
DEFAULT_ALPHA_GRID = tuple(round(i * 0.05, 2) for i in range(21))


@dataclass(frozen=True)
class MinibatchRecord:
    task_id: str
    prompt: str
    program_text: str
    program_tokens: tuple[str, ...]
    sample_weight: float


@dataclass(frozen=True)
class Provenance:
    seed: int
    priority: PriorityConfig
    buffer_version: int

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "priority": {
                "mix_weight": self.priority.mix_weight,
                "prioritization_exponent": self.priority.prioritization_exponent,
                "scheme": self.priority.scheme.value,
            },
            "buffer_version": self.buffer_version,
        }


@dataclass
class Minibatch:
    records: list[MinibatchRecord]
    provenance: Provenance


def _record(entry, tasks: dict) -> MinibatchRecord:
    task = tasks.get(entry.task_id)
    if task is None:
        raise ValueError(f"unknown task_id {entry.task_id!r}")
    return MinibatchRecord(
        task_id=entry.task_id,
        prompt=task.prompt,
        program_text=entry.program_text,
        program_tokens=entry.program_tokens,
        sample_weight=1.0,
    )


def build_minibatch(buffer, tasks, config: PriorityConfig, n: int, seed: int,
                    with_replacement: bool = True,
                    buffer_version: int | None = None) -> Minibatch:
    """Draw n entries by priority and shape them into training records.

    ``tasks`` supplies the prompts (entries store only the task id).
    Provenance pins the seed, priority config, and buffer version so the
    batch can be reproduced exactly.
    """
    task_map = tasks_by_id(tasks) if not isinstance(tasks, dict) else tasks
    if buffer_version is None:
        buffer_version = buffer.version if isinstance(buffer, ReplayBuffer) else 0
    drawn = sample(buffer, config, n, seed, with_replacement)
    records = [_record(entry, task_map) for entry in drawn]
    return Minibatch(records=records,
                     provenance=Provenance(seed=seed, priority=config,
                                           buffer_version=buffer_version))


def export_jsonl(batch: Minibatch, path) -> None:
    """Write one JSON object per record plus a trailing manifest line."""
    if not batch.records:
        raise ValueError("empty batch")
    with open(path, "w", encoding="utf-8") as fh:
        for rec in batch.records:
            fh.write(json.dumps({
                "prompt": rec.prompt,
                "completion": rec.program_text,
                "weight": rec.sample_weight,
                "task_id": rec.task_id,
            }, ensure_ascii=False) + "\n")
        manifest = dict(batch.provenance.to_json_dict(), records=len(batch.records))
        fh.write(json.dumps({"manifest": manifest}, ensure_ascii=False) + "\n")


def read_export(path) -> tuple[list[dict], dict]:
    """Parse an exported JSONL batch back into (records, manifest)."""
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh.read().splitlines() if line]
    if not lines or "manifest" not in lines[-1]:
        raise ValueError("missing trailing manifest line")
    return lines[:-1], lines[-1]["manifest"]


@dataclass(frozen=True)
class LoopConfig:
    iterations: int
    beam: BeamConfig = field(default_factory=BeamConfig)
    priority: PriorityConfig = field(default_factory=PriorityConfig)
    minibatch_size: int = 16
    update_weight: float = 1.0
    buffer_capacity: int | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.minibatch_size < 1:
            raise ValueError(f"minibatch_size must be >= 1, got {self.minibatch_size}")
        if self.update_weight <= 0:
            raise ValueError(f"update_weight must be > 0, got {self.update_weight}")


@dataclass
class IterationMetrics:
    iteration: int
    mean_pass_rate: float
    accuracy_rate: float
    group_pass_rates: dict[str, float]
    buffer_size: int
    mean_p2value: float | None = None
    min_update_lift: float | None = None
    degenerate_uniform: bool = False
    sample_failures: int = 0
    untestable: int = 0

    def to_json_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "mean_pass_rate": self.mean_pass_rate,
            "accuracy_rate": self.accuracy_rate,
            "group_pass_rates": self.group_pass_rates,
            "buffer_size": self.buffer_size,
            "mean_p2value": self.mean_p2value,
            "min_update_lift": self.min_update_lift,
            "degenerate_uniform": self.degenerate_uniform,
            "sample_failures": self.sample_failures,
            "untestable": self.untestable,
        }


@dataclass
class LoopResult:
    baseline: IterationMetrics
    history: list[IterationMetrics]
    buffer: ReplayBuffer
    last_minibatch: Minibatch | None = None
    error: dict | None = None

    def to_json_dict(self) -> dict:
        return {
            "baseline": self.baseline.to_json_dict(),
            "iterations": [m.to_json_dict() for m in self.history],
            "error": self.error,
        }


def evaluate(model, eval_tasks, beam_config: BeamConfig, runner,
             workers: int | None = None) -> tuple[float, float, dict[str, float]]:
    """Best-of-k evaluation.

    Returns (mean pass rate of each task's best candidate, fraction of
    tasks where some candidate passes every test, per-group means).
    """
    if not eval_tasks:
        raise ValueError("no eval tasks")
    best_rates: list[float] = []
    solved: list[bool] = []
    by_group: dict[str, list[float]] = {}
    for task in eval_tasks:
        hypotheses = beam_search(model, task.prompt, beam_config)
        rates = [
            pass_rate(" ".join(t for t in hyp.tokens if t != model.eos_token),
                      task.tests, runner, workers)
            for hyp in hypotheses
        ]
        best = max(rates, default=0.0)
        best_rates.append(best)
        solved.append(any(r == 1.0 for r in rates))
        by_group.setdefault(task.group, []).append(best)
    group_pass_rates = {g: float(np.mean(v)) for g, v in sorted(by_group.items())}
    return float(np.mean(best_rates)), float(np.mean(solved)), group_pass_rates


def _check_language(tasks, runner) -> None:
    tag = getattr(runner, "language_tag", None)
    if tag is None:
        return
    mismatched = [t.task_id for t in tasks if t.language_tag != tag]
    if mismatched:
        raise ValueError(f"runner handles {tag!r} tasks but got {mismatched}")


def btp_loop(model, tasks, eval_tasks, config: LoopConfig, seed: int = 0,
             runner=None, workers: int | None = None) -> LoopResult:
    """Run the full generate / test / prioritized-replay loop.

    Per iteration: decode candidates for every task, annotate pass rates,
    draw a prioritized minibatch, apply weighted count updates, then
    evaluate best-of-k on the held-out tasks.  The whole loop is a
    deterministic function of (model state, tasks, config, seed).

    If every priority score is zero (possible when mix_weight is 0 and
    all programs fail) the draw falls back to uniform with a warning.
    A phase error aborts the current iteration and is reported on the
    result; completed iterations keep their metrics.
    """
    if runner is None:
        runner = ToyRunner()
    if not tasks:
        raise ValueError("no tasks")
    _check_language(tasks, runner)
    _check_language(eval_tasks, runner)
    task_map = tasks_by_id(tasks)
    buffer = ReplayBuffer(capacity=config.buffer_capacity, rng_seed=seed)

    mean_rate, accuracy, by_group = evaluate(model, eval_tasks, config.beam, runner, workers)
    baseline = IterationMetrics(iteration=0, mean_pass_rate=mean_rate,
                                accuracy_rate=accuracy, group_pass_rates=by_group,
                                buffer_size=0)
    result = LoopResult(baseline=baseline, history=[], buffer=buffer)

    for iteration in range(1, config.iterations + 1):
        try:
            metrics = _run_iteration(model, tasks, task_map, eval_tasks, config,
                                     buffer, iteration, seed, runner, workers, result)
        except Exception as exc:
            result.error = {
                "iteration": iteration,
                "type": type(exc).__name__,
                "message": str(exc),
            }
            logger.error("iteration %d aborted: %s", iteration, exc)
            break
        result.history.append(metrics)
    return result


def _run_iteration(model, tasks, task_map, eval_tasks, config, buffer, iteration,
                   seed, runner, workers, result) -> IterationMetrics:
    sample_report = sample_phase(model, tasks, config.beam, buffer)
    test_report = test_phase(buffer, task_map, runner, workers)
    tested = buffer.tested_entries()
    if not tested:
        raise RuntimeError("no testable entries in buffer")

    scores = p2values(tested, config.priority.mix_weight)
    batch_seed = derive_seed(seed, f"minibatch/{iteration}")
    degenerate = bool(np.all(scores == 0.0))
    if degenerate:
        logger.warning("all priority scores are zero; falling back to uniform sampling")
        rng = np.random.default_rng(batch_seed)
        idx = draw_indices(np.full(len(tested), 1.0 / len(tested)),
                           config.minibatch_size, rng)
        records = [_record(tested[i], task_map) for i in idx]
        batch = Minibatch(records=records,
                          provenance=Provenance(seed=batch_seed, priority=config.priority,
                                                buffer_version=buffer.version))
    else:
        pool = build_entry_pool(tested, config.priority)
        batch = build_minibatch(pool, task_map, config.priority, config.minibatch_size,
                                batch_seed, buffer_version=buffer.version)
    result.last_minibatch = batch

    min_lift = None
    for rec in batch.records:
        before = model.sequence_logprob(rec.program_tokens, rec.prompt)
        model.update(rec.program_tokens, config.update_weight * rec.sample_weight, rec.prompt)
        lift = model.sequence_logprob(rec.program_tokens, rec.prompt) - before
        min_lift = lift if min_lift is None else min(min_lift, lift)

    mean_rate, accuracy, by_group = evaluate(model, eval_tasks, config.beam, runner, workers)
    return IterationMetrics(
        iteration=iteration,
        mean_pass_rate=mean_rate,
        accuracy_rate=accuracy,
        group_pass_rates=by_group,
        buffer_size=len(buffer),
        mean_p2value=float(np.mean(scores)),
        min_update_lift=min_lift,
        degenerate_uniform=degenerate,
        sample_failures=len(sample_report.failures),
        untestable=len(test_report.untestable),
    )


@dataclass
class SweepTable:
    """Row-per-value grid of final pass rates, one column per task group."""

    parameter: str
    values: list
    groups: list[str]
    cells: list[list[float]]

    def to_json_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "groups": self.groups,
            "rows": [
                {"value": v, "cells": dict(zip(self.groups, row))}
                for v, row in zip(self.values, self.cells)
            ],
        }

    def to_text(self) -> str:
        labels = [f"{v:g}" for v in self.values]
        width0 = max(len(self.parameter), *(len(s) for s in labels))
        widths = [max(len(g), 6) for g in self.groups]
        lines = [
            "  ".join([self.parameter.ljust(width0)]
                      + [g.rjust(w) for g, w in zip(self.groups, widths)])
        ]
        for label, row in zip(labels, self.cells):
            lines.append("  ".join(
                [label.ljust(width0)]
                + [f"{cell:.4f}".rjust(w) for cell, w in zip(row, widths)]))
        return "\n".join(lines) + "\n"


def _run_sweep(parameter, values, model, tasks, eval_tasks, make_config, seed,
               runner, workers) -> SweepTable:
    groups = sorted({t.group for t in eval_tasks})
    cells = []
    for value in values:
        fresh = model.copy()
        run_seed = derive_seed(seed, f"sweep-{parameter}/{value:g}")
        outcome = btp_loop(fresh, tasks, eval_tasks, make_config(value), seed=run_seed,
                           runner=runner, workers=workers)
        if outcome.error is not None:
            raise RuntimeError(
                f"sweep run {parameter}={value:g} failed: {outcome.error['message']}")
        final = outcome.history[-1]
        cells.append([final.group_pass_rates.get(g, 0.0) for g in groups])
    return SweepTable(parameter=parameter, values=list(values), groups=groups, cells=cells)


def sweep_k(model, tasks, eval_tasks, k_values, config: LoopConfig, seed: int = 0,
            runner=None, workers: int | None = None) -> SweepTable:
    """One fresh-model loop per beam width; returns the pass-rate table."""
    k_values = list(k_values)
    if not k_values:
        raise ValueError("empty k grid")
    bad = [k for k in k_values if not isinstance(k, int) or isinstance(k, bool) or k < 1]
    if bad:
        raise ValueError(f"invalid k values {bad}; beam widths must be integers >= 1")
    return _run_sweep(
        "k", k_values, model, tasks, eval_tasks,
        lambda k: replace(config, beam=replace(config.beam, k=k)),
        seed, runner, workers)


def sweep_alpha(model, tasks, eval_tasks, alpha_values, config: LoopConfig,
                seed: int = 0, runner=None, workers: int | None = None) -> SweepTable:
    """One fresh-model loop per priority mix weight; returns the table."""
    alpha_values = list(alpha_values)
    if not alpha_values:
        raise ValueError("empty alpha grid")
    bad = [a for a in alpha_values if not 0.0 <= a <= 1.0]
    if bad:
        raise ValueError(f"invalid alpha values {bad}; mix weights must lie in [0, 1]")
    return _run_sweep(
        "alpha", alpha_values, model, tasks, eval_tasks,
        lambda a: replace(config, priority=replace(config.priority, mix_weight=a)),
        seed, runner, workers)
