"""Trainable count-based autoregressive token model.

A Laplace-smoothed n-gram over a small fixed vocabulary.  The conditioning
context is the last ``order`` items of the whitespace-split prompt followed
by the tokens generated so far, left-padded with a begin marker.  Because
the prompt participates in the context window, the model genuinely
conditions on the task, not just on the generated prefix.

Counts are plain floats, so fine-tuning is a weighted count increment and
every probability is exactly computable.
"""

import json
import math

import numpy as np

from . import toylang

EOS_TOKEN = "<eos>"
BOS_TOKEN = "<bos>"

TOY_VOCABULARY = toylang.PROGRAM_TOKENS + (EOS_TOKEN,)


class ToyLM:
    """Laplace-smoothed n-gram language model with incremental updates."""

    def __init__(self, vocabulary=TOY_VOCABULARY, order: int = 2, smoothing: float = 1.0):
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        if smoothing <= 0:
            raise ValueError(f"smoothing must be > 0, got {smoothing}")
        if len(set(vocabulary)) != len(vocabulary):
            raise ValueError("vocabulary contains duplicates")
        if EOS_TOKEN not in vocabulary:
            raise ValueError(f"vocabulary must contain the end token {EOS_TOKEN!r}")
        self.vocabulary = tuple(vocabulary)
        self.eos_token = EOS_TOKEN
        self.order = order
        self.smoothing = smoothing
        # context tuple -> {token: count}; contexts may mix prompt words,
        # vocabulary tokens, and BOS padding
        self.counts: dict[tuple[str, ...], dict[str, float]] = {}
        self._token_index = {tok: i for i, tok in enumerate(self.vocabulary)}

    def _context(self, prompt_words: list[str], prefix: tuple[str, ...] | list[str]) -> tuple[str, ...]:
        seq = prompt_words + list(prefix)
        if len(seq) >= self.order:
            return tuple(seq[-self.order:])
        return (BOS_TOKEN,) * (self.order - len(seq)) + tuple(seq)

    def next_distribution(self, prefix, prompt: str = "") -> np.ndarray:
        """Probability vector over the vocabulary for the next token."""
        ctx = self._context(prompt.split(), prefix)
        bucket = self.counts.get(ctx)
        v = len(self.vocabulary)
        if bucket is None:
            return np.full(v, 1.0 / v)
        probs = np.full(v, self.smoothing)
        for token, count in bucket.items():
            probs[self._token_index[token]] += count
        probs /= sum(bucket.values()) + self.smoothing * v
        return probs

    def token_prob(self, token: str, prefix, prompt: str = "") -> float:
        return float(self.next_distribution(prefix, prompt)[self._token_index[token]])

    def sequence_logprob(self, tokens, prompt: str = "") -> float:
        """Natural-log probability of emitting ``tokens`` given ``prompt``."""
        total = 0.0
        for i, token in enumerate(tokens):
            total += math.log(self.token_prob(token, tokens[:i], prompt))
        return total

    def update(self, tokens, weight: float, prompt: str = "") -> "ToyLM":
        """Increment every (context, token) transition along ``tokens``.

        The model probability of the full sequence strictly increases as
        long as the vocabulary has at least two tokens.
        """
        if weight <= 0:
            raise ValueError(f"update weight must be > 0, got {weight}")
        unknown = [t for t in tokens if t not in self._token_index]
        if unknown:
            raise ValueError(f"unknown token {unknown[0]!r}")
        prompt_words = prompt.split()
        for i, token in enumerate(tokens):
            ctx = self._context(prompt_words, tokens[:i])
            bucket = self.counts.setdefault(ctx, {})
            bucket[token] = bucket.get(token, 0.0) + weight
        return self

    def copy(self) -> "ToyLM":
        clone = ToyLM(self.vocabulary, self.order, self.smoothing)
        clone.counts = {ctx: dict(bucket) for ctx, bucket in self.counts.items()}
        return clone

    # -- serialization: JSON map of context -> counts plus hyperparameters.
    # Context keys are the space-joined context tokens (all context items
    # are whitespace-free by construction).

    def to_json_dict(self) -> dict:
        return {
            "order": self.order,
            "smoothing": self.smoothing,
            "vocabulary": list(self.vocabulary),
            "counts": {" ".join(ctx): dict(bucket) for ctx, bucket in self.counts.items()},
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ToyLM":
        model = cls(tuple(data["vocabulary"]), data["order"], data["smoothing"])
        for key, bucket in data["counts"].items():
            model.counts[tuple(key.split(" "))] = {t: float(c) for t, c in bucket.items()}
        return model

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def load(cls, path) -> "ToyLM":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))

    @classmethod
    def randomized(cls, vocabulary=TOY_VOCABULARY, order: int = 2, smoothing: float = 1.0,
                   seed: int = 0, updates: int = 20, max_len: int = 6) -> "ToyLM":
        """Model seeded with random-sequence count updates, for testing."""
        model = cls(vocabulary, order, smoothing)
        rng = np.random.default_rng(seed)
        emittable = [t for t in model.vocabulary if t != model.eos_token]
        for _ in range(updates):
            length = int(rng.integers(0, max_len))
            seq = [emittable[int(i)] for i in rng.integers(0, len(emittable), size=length)]
            seq.append(model.eos_token)
            model.update(seq, float(rng.uniform(0.5, 4.0)))
        return model
