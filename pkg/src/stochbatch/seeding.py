"""Named, independent random streams derived from one base seed.

Streams are keyed by a path such as ``(trial, "gate")`` and built from
Philox via ``SeedSequence.spawn_key``, so adding a new purpose never shifts
the numbers drawn by an existing one.
"""
from __future__ import annotations

import zlib

import numpy as np


def _code(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("stream keys must be non-negative")
        return int(key)
    return zlib.crc32(str(key).encode())


def seed_sequence(base_seed: int, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(base_seed), spawn_key=tuple(_code(k) for k in key))


def stream(base_seed: int, *key) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_sequence(base_seed, *key)))


def derive_seed(base_seed: int, *key) -> int:
    """A 64-bit integer seed for a sub-component that takes a plain seed."""
    return int(seed_sequence(base_seed, *key).generate_state(1, np.uint64)[0])
