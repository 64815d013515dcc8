"""Deterministic random streams derived from (seed, label, counters)."""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["derive_rng", "as_rng"]


def derive_rng(seed: int, label: str, *counters: int) -> np.random.Generator:
    """Independent generator for a named component; stable across runs and platforms."""
    key = (zlib.crc32(label.encode("utf-8")),) + tuple(int(c) for c in counters)
    return np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=key))


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
