"""Experience replay buffer with possibility/pass-rate prioritized sampling.

Stored entries pair a generated program with the log of its combined
sequence probability and, once tested, its pass rate.  Because raw
sequence probabilities shrink geometrically with length, the priority
math uses the per-token geometric mean exp(seq_logprob / token_count),
which is length-invariant and lives on the same [0, 1] scale as the pass
rate.  The raw log-probability is kept alongside for auditing.

Sampling follows a two-stage recipe: each entry gets a positive priority
(either its mixed score directly, or the reciprocal of its rank), and the
draw probabilities are the priorities raised to a prioritization exponent
and normalized.  Exponent 0 is the uniform case by the formula itself.

Concurrency: single writer, many readers.  ``insert`` and eviction are
meant to be serialized by the caller; ``sample`` works on an immutable
snapshot of the priority vector it computes at call time.
"""

import enum
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import BufferFormatError

BUFFER_FORMAT_VERSION = 1

_ENTRY_FIELDS = (
    "task_id",
    "program_tokens",
    "program_text",
    "seq_logprob",
    "seq_prob_normalized",
    "pass_rate",
    "insertion_index",
)
_HEADER_FIELDS = ("version", "rng_seed", "capacity")


class PriorityScheme(str, enum.Enum):
    PROPORTIONAL = "proportional"
    RANK = "rank"


@dataclass(frozen=True)
class PriorityConfig:
    """Knobs for the prioritized draw.

    ``mix_weight`` balances sequence probability against pass rate in the
    priority score (1 = probability only, 0 = pass rate only).
    ``prioritization_exponent`` controls how sharply sampling concentrates
    on high-priority entries (0 = uniform).  The two are independently
    tunable.
    """

    mix_weight: float = 0.5
    prioritization_exponent: float = 1.0
    scheme: PriorityScheme = PriorityScheme.RANK

    def __post_init__(self):
        if not 0.0 <= self.mix_weight <= 1.0:
            raise ValueError(f"mix_weight must be in [0, 1], got {self.mix_weight}")
        if self.prioritization_exponent < 0:
            raise ValueError(
                f"prioritization_exponent must be >= 0, got {self.prioritization_exponent}"
            )
        if not isinstance(self.scheme, PriorityScheme):
            object.__setattr__(self, "scheme", PriorityScheme(self.scheme))


@dataclass(frozen=True)
class ReplayEntry:
    """One stored generation: program, its probability, and its pass rate.

    ``pass_rate`` is None until the testing phase annotates the entry.
    ``insertion_index`` is a monotone counter unique within one buffer.
    """

    task_id: str
    program_tokens: tuple[str, ...]
    program_text: str
    seq_logprob: float
    seq_prob_normalized: float
    pass_rate: float | None
    insertion_index: int

    def __post_init__(self):
        if len(self.program_tokens) < 1:
            raise ValueError("program_tokens must hold at least one token")
        if self.seq_logprob > 0:
            raise ValueError(f"seq_logprob must be <= 0, got {self.seq_logprob}")
        if not 0.0 < self.seq_prob_normalized <= 1.0:
            raise ValueError(
                f"seq_prob_normalized must be in (0, 1], got {self.seq_prob_normalized}"
            )
        expected = math.exp(self.seq_logprob / len(self.program_tokens))
        if not math.isclose(self.seq_prob_normalized, expected, rel_tol=1e-9):
            raise ValueError(
                f"seq_prob_normalized {self.seq_prob_normalized!r} inconsistent with "
                f"exp(seq_logprob / token_count) = {expected!r}"
            )
        if self.pass_rate is not None and not 0.0 <= self.pass_rate <= 1.0:
            raise ValueError(f"pass_rate must be in [0, 1], got {self.pass_rate}")
        if self.insertion_index < 0:
            raise ValueError(f"insertion_index must be >= 0, got {self.insertion_index}")

    @property
    def tested(self) -> bool:
        return self.pass_rate is not None

    @classmethod
    def from_generation(cls, task_id: str, tokens, cum_logprob: float, eos_token: str,
                        insertion_index: int) -> "ReplayEntry":
        tokens = tuple(tokens)
        return cls(
            task_id=task_id,
            program_tokens=tokens,
            program_text=" ".join(t for t in tokens if t != eos_token),
            seq_logprob=cum_logprob,
            seq_prob_normalized=math.exp(cum_logprob / len(tokens)),
            pass_rate=None,
            insertion_index=insertion_index,
        )


def p2value(entry: ReplayEntry, mix_weight: float) -> float:
    """Mixed priority score: mix_weight * probability + (1 - mix_weight) * pass rate."""
    if not 0.0 <= mix_weight <= 1.0:
        raise ValueError(f"mix_weight must be in [0, 1], got {mix_weight}")
    if entry.pass_rate is None:
        raise ValueError(f"untested entry (insertion_index={entry.insertion_index})")
    return mix_weight * entry.seq_prob_normalized + (1.0 - mix_weight) * entry.pass_rate


def _entries(source) -> list[ReplayEntry]:
    if isinstance(source, ReplayBuffer):
        return source.entries
    return list(source)


def p2values(source, mix_weight: float) -> np.ndarray:
    return np.array([p2value(e, mix_weight) for e in _entries(source)])


def priorities(source, config: PriorityConfig) -> np.ndarray:
    """Per-entry priorities in buffer order.

    Proportional scheme: the mixed score itself.  Rank scheme: 1/rank with
    rank 1 for the highest score; ties rank the earlier insertion first.
    """
    entries = _entries(source)
    if not entries:
        raise ValueError("empty buffer")
    values = p2values(entries, config.mix_weight)
    if config.scheme is PriorityScheme.PROPORTIONAL:
        return values
    order = sorted(range(len(entries)), key=lambda i: (-values[i], entries[i].insertion_index))
    out = np.empty(len(entries))
    for rank0, i in enumerate(order):
        out[i] = 1.0 / (rank0 + 1)
    return out


def build_entry_pool(source, config: PriorityConfig) -> list[ReplayEntry]:
    """Entries eligible for a prioritized draw under the given config.

    Under the proportional scheme an entry whose mixed score is exactly
    zero would get zero draw probability from the power formula anyway;
    dropping it here keeps every component of the distribution positive.
    The rank scheme gives every entry a positive priority, so nothing is
    dropped there.
    """
    entries = _entries(source)
    if config.scheme is not PriorityScheme.PROPORTIONAL:
        return entries
    values = p2values(entries, config.mix_weight)
    return [e for e, v in zip(entries, values) if v > 0]


def sampling_distribution(priority_values, prioritization_exponent: float) -> np.ndarray:
    """Draw probabilities p_i^beta / sum_k p_k^beta, computed in the log domain."""
    p = np.asarray(priority_values, dtype=float)
    if p.size == 0:
        raise ValueError("empty buffer")
    if np.any(p <= 0):
        raise ValueError("non-positive priority")
    if prioritization_exponent < 0:
        raise ValueError(
            f"prioritization_exponent must be >= 0, got {prioritization_exponent}"
        )
    if prioritization_exponent == 0:
        return np.full(p.size, 1.0 / p.size)
    logits = prioritization_exponent * np.log(p)
    weights = np.exp(logits - logits.max())
    return weights / weights.sum()


class PrefixSumSampler:
    """Cumulative prefix-sum table over sampling weights.

    One draw is a binary search of the cumulative array, O(log n).  The
    table is a snapshot: it is rebuilt whenever the weights change (new
    entries, different priority config), never mutated in place.
    """

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        if w.size == 0:
            raise ValueError("no weights")
        if np.any(w < 0):
            raise ValueError("negative weight")
        self._cumulative = np.cumsum(w)
        if self._cumulative[-1] <= 0:
            raise ValueError("total weight must be positive")

    @property
    def total(self) -> float:
        return float(self._cumulative[-1])

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size) * self._cumulative[-1]
        return np.searchsorted(self._cumulative, u, side="right")


def draw_indices(probabilities, n: int, rng: np.random.Generator,
                 with_replacement: bool = True) -> list[int]:
    """Draw n indices from an explicit probability vector."""
    probs = np.asarray(probabilities, dtype=float)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if with_replacement:
        return [int(i) for i in PrefixSumSampler(probs).draw(rng, n)]
    if n > probs.size:
        raise ValueError(f"cannot draw {n} without replacement from {probs.size} entries")
    remaining = probs.copy()
    out = []
    for _ in range(n):
        idx = int(PrefixSumSampler(remaining).draw(rng, 1)[0])
        out.append(idx)
        remaining[idx] = 0.0
    return out


def sample(source, config: PriorityConfig, n: int, seed: int,
           with_replacement: bool = True) -> list[ReplayEntry]:
    """Draw n entries with probability given by the prioritized distribution.

    Deterministic for a given seed.  All entries must be tested.
    """
    entries = _entries(source)
    if not entries:
        raise ValueError("empty buffer")
    if any(not e.tested for e in entries):
        raise ValueError("untested entries present")
    probs = sampling_distribution(priorities(entries, config), config.prioritization_exponent)
    rng = np.random.default_rng(seed)
    return [entries[i] for i in draw_indices(probs, n, rng, with_replacement)]


class ReplayBuffer:
    """Ordered store of replay entries with FIFO eviction at capacity."""

    def __init__(self, capacity: int | None = None, rng_seed: int = 0):
        if capacity is not None and capacity < 1:
            raise ValueError(f"capacity must be positive or None, got {capacity}")
        self.capacity = capacity
        self.rng_seed = rng_seed
        self.entries: list[ReplayEntry] = []
        self._indices: set[int] = set()
        self._next_index = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ReplayBuffer):
            return NotImplemented
        return (self.entries == other.entries
                and self.capacity == other.capacity
                and self.rng_seed == other.rng_seed)

    @property
    def version(self) -> int:
        """Monotone count of insertions ever made (identifies buffer state)."""
        return self._next_index

    def insert(self, entry: ReplayEntry) -> "ReplayBuffer":
        if entry.insertion_index in self._indices:
            raise ValueError(f"duplicate insertion_index {entry.insertion_index}")
        self.entries.append(entry)
        self._indices.add(entry.insertion_index)
        self._next_index = max(self._next_index, entry.insertion_index + 1)
        while self.capacity is not None and len(self.entries) > self.capacity:
            evicted = self.entries.pop(0)
            self._indices.discard(evicted.insertion_index)
        return self

    def insert_generation(self, task_id: str, tokens, cum_logprob: float,
                          eos_token: str) -> ReplayEntry:
        entry = ReplayEntry.from_generation(task_id, tokens, cum_logprob, eos_token,
                                            insertion_index=self._next_index)
        self.insert(entry)
        return entry

    def set_pass_rate(self, position: int, pass_rate: float | None) -> ReplayEntry:
        updated = replace(self.entries[position], pass_rate=pass_rate)
        self.entries[position] = updated
        return updated

    def tested_entries(self) -> list[ReplayEntry]:
        return [e for e in self.entries if e.tested]

    def priorities(self, config: PriorityConfig) -> np.ndarray:
        return priorities(self.entries, config)

    def sample(self, config: PriorityConfig, n: int, seed: int | None = None,
               with_replacement: bool = True) -> list[ReplayEntry]:
        return sample(self.entries, config, n,
                      self.rng_seed if seed is None else seed, with_replacement)

    # -- persistence: newline-delimited JSON, one entry per line, after a
    # header line.  Floats round-trip bit-exactly through repr.

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({
                "version": BUFFER_FORMAT_VERSION,
                "rng_seed": self.rng_seed,
                "capacity": self.capacity,
            }) + "\n")
            for e in self.entries:
                fh.write(json.dumps({
                    "task_id": e.task_id,
                    "program_tokens": list(e.program_tokens),
                    "program_text": e.program_text,
                    "seq_logprob": e.seq_logprob,
                    "seq_prob_normalized": e.seq_prob_normalized,
                    "pass_rate": e.pass_rate,
                    "insertion_index": e.insertion_index,
                }) + "\n")

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines:
            raise BufferFormatError("missing header line", line_number=1)
        header = _parse_json_line(lines[0], 1)
        if set(header) != set(_HEADER_FIELDS):
            raise BufferFormatError(
                f"header fields must be exactly {sorted(_HEADER_FIELDS)}", line_number=1)
        if header["version"] != BUFFER_FORMAT_VERSION:
            raise BufferFormatError(
                f"unsupported buffer format version {header['version']!r}", line_number=1)
        buffer = cls(capacity=header["capacity"], rng_seed=header["rng_seed"])
        for number, line in enumerate(lines[1:], start=2):
            record = _parse_json_line(line, number)
            if set(record) != set(_ENTRY_FIELDS):
                raise BufferFormatError(
                    f"entry fields must be exactly {sorted(_ENTRY_FIELDS)}", line_number=number)
            if buffer.capacity is not None and len(buffer) >= buffer.capacity:
                raise BufferFormatError("more entries than capacity", line_number=number)
            try:
                entry = ReplayEntry(
                    task_id=record["task_id"],
                    program_tokens=tuple(record["program_tokens"]),
                    program_text=record["program_text"],
                    seq_logprob=record["seq_logprob"],
                    seq_prob_normalized=record["seq_prob_normalized"],
                    pass_rate=record["pass_rate"],
                    insertion_index=record["insertion_index"],
                )
                buffer.insert(entry)
            except (TypeError, ValueError) as exc:
                raise BufferFormatError(str(exc), line_number=number) from exc
        return buffer


def _parse_json_line(line: str, number: int) -> dict:
    try:
        value = json.loads(line)
    except json.JSONDecodeError as exc:
        raise BufferFormatError(f"invalid JSON ({exc.msg})", line_number=number) from exc
    if not isinstance(value, dict):
        raise BufferFormatError("expected a JSON object", line_number=number)
    return value
