"""Deterministic seed derivation for per-phase RNG streams."""

import hashlib


def derive_seed(seed: int, tag: str) -> int:
    """Derive a 64-bit child seed from a master seed and a phase tag.

    Computes sha256(f"{seed}:{tag}") and keeps the first 8 bytes,
    big-endian.  Every phase of a run gets an independent stream that is
    reproducible across processes and platforms from the single
    top-level seed.
    """
    digest = hashlib.sha256(f"{seed}:{tag}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
