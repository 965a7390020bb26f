"""Deterministic random-stream derivation.

Every stochastic component draws from a generator derived from the run's
master seed plus a structural key (purpose tag, slot index, particle
index, ...). Streams are therefore independent of evaluation order and of
how much randomness other components consume, which is what makes whole
runs reproducible bit-for-bit regardless of worker count.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_word(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"unsupported seed key part: {part!r}")


def seed_sequence(master: int, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(master), spawn_key=tuple(_key_word(p) for p in key))


def rng_for(master: int, *key) -> np.random.Generator:
    """Generator for (master seed, structural key), independent of call order."""
    return np.random.default_rng(seed_sequence(master, *key))


def child_seed(master: int, *key) -> int:
    """A 63-bit integer seed derived from (master, key), for nested components."""
    return int(seed_sequence(master, *key).generate_state(2, np.uint32).view(np.uint64)[0] >> 1)
