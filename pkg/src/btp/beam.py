"""Beam-search decoding over a pluggable token model.

The combined probability of a candidate is accumulated in the log domain
(the product of per-step token probabilities would underflow).  Finished
hypotheses are frozen outside the live beam and compete for the final
ranking by raw cumulative log-probability; no length penalty is applied.
"""

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import BridgeError, InvalidModelError


class TokenModel(Protocol):
    """Anything that can score next tokens for a (prompt, prefix) pair."""

    vocabulary: tuple[str, ...]
    eos_token: str

    def next_distribution(self, prefix, prompt: str = "") -> np.ndarray: ...


@dataclass(frozen=True)
class Hypothesis:
    """A candidate sequence with its cumulative log-probability.

    ``tokens`` includes the end-of-sequence token when the hypothesis
    terminated by emitting it; sequences force-finished at max_len carry
    no end token.
    """

    tokens: tuple[str, ...]
    cum_logprob: float
    finished: bool


@dataclass(frozen=True)
class BeamConfig:
    k: int = 3
    max_len: int = 8

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"beam width k must be >= 1, got {self.k}")
        if self.max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {self.max_len}")


def _checked_distribution(model, prefix, prompt) -> np.ndarray:
    dist = np.asarray(model.next_distribution(prefix, prompt), dtype=float)
    if dist.shape != (len(model.vocabulary),):
        raise InvalidModelError(
            f"invalid model: distribution has shape {dist.shape}, "
            f"expected ({len(model.vocabulary)},)"
        )
    if np.any(dist < 0):
        raise InvalidModelError("invalid model: negative probability component")
    total = float(dist.sum())
    if abs(total - 1.0) > 1e-9:
        raise InvalidModelError(f"invalid model: distribution sums to {total!r}")
    return dist


def beam_search(model: TokenModel, prompt: str, config: BeamConfig) -> list[Hypothesis]:
    """Return up to k finished hypotheses, best combined probability first.

    At each step every live partial explores the whole vocabulary; the
    live beam keeps the k highest-scoring partials.  Emitting the end
    token finishes a hypothesis, as does reaching max_len tokens.  Ties
    are broken lexicographically by token ids, so the output is fully
    deterministic.  Zero-probability extensions are unreachable and are
    never expanded.
    """
    eos = model.eos_token
    token_ids = {tok: i for i, tok in enumerate(model.vocabulary)}
    eos_id = token_ids[eos]
    vocab = list(model.vocabulary)

    # (cum_logprob, id tuple, token tuple, finishes); ranked by (-logprob, ids)
    live: list[tuple[float, tuple[int, ...], tuple[str, ...]]] = [(0.0, (), ())]
    finals: list[tuple[float, tuple[int, ...], tuple[str, ...]]] = []

    while live:
        extensions: list[tuple[float, tuple[int, ...], tuple[str, ...], bool]] = []
        for logprob, ids, tokens in live:
            dist = _checked_distribution(model, tokens, prompt)
            at_last_step = len(tokens) + 1 == config.max_len
            for tok_id, prob in enumerate(dist):
                if prob <= 0.0:
                    continue
                extensions.append((
                    logprob + math.log(prob),
                    ids + (tok_id,),
                    tokens + (vocab[tok_id],),
                    tok_id == eos_id or at_last_step,
                ))
        extensions.sort(key=lambda c: (-c[0], c[1]))
        # A finishing extension is frozen only when it ranks within the
        # step's top-k overall; below that it loses to k better candidates
        # and is pruned exactly like a partial.  With k=1 this reduces to
        # greedy argmax decoding.
        finals.extend(ext[:3] for ext in extensions[: config.k] if ext[3])
        live = [ext[:3] for ext in extensions if not ext[3]][: config.k]

    finals.sort(key=lambda c: (-c[0], c[1]))
    return [
        Hypothesis(tokens=tokens, cum_logprob=logprob, finished=True)
        for logprob, _, tokens in finals[: config.k]
    ]


@dataclass
class SamplePhaseReport:
    """Outcome of a sampling pass: inserted pairs plus per-task failures."""

    pairs: list[tuple[str, Hypothesis]]
    failures: list[tuple[str, str]]

    @property
    def inserted(self) -> int:
        return len(self.pairs)


def sample_phase(model: TokenModel, tasks, config: BeamConfig, buffer) -> SamplePhaseReport:
    """Decode every task and insert the candidates as untested entries.

    Beam failures are recorded per task and do not stop the remaining
    tasks.  Each successful task contributes min(k, reachable) entries.
    """
    if not tasks:
        raise ValueError("no tasks")
    report = SamplePhaseReport(pairs=[], failures=[])
    for task in tasks:
        try:
            hypotheses = beam_search(model, task.prompt, config)
        except (InvalidModelError, BridgeError) as exc:
            report.failures.append((task.task_id, str(exc)))
            continue
        for hyp in hypotheses:
            buffer.insert_generation(task.task_id, hyp.tokens, hyp.cum_logprob, model.eos_token)
            report.pairs.append((task.task_id, hyp))
    return report
