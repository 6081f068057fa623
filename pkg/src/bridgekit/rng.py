"""Deterministic random-stream derivation.

Every stream in the package is a Philox generator derived from an integer
seed plus a tuple key, so any draw is a pure function of (seed, key) and
never of batch size, thread count, or call order elsewhere in the program.
"""
from __future__ import annotations

import numpy as np


def child_sequence(seed: int, *key: int) -> np.random.SeedSequence:
    """Seed sequence for the stream identified by ``key`` under ``seed``."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))


def make_generator(seed: int | np.random.SeedSequence, *key: int) -> np.random.Generator:
    """Philox generator for (seed, key). Counter-based, cheap to create."""
    if isinstance(seed, np.random.SeedSequence):
        seq = np.random.SeedSequence(entropy=seed.entropy,
                                     spawn_key=tuple(seed.spawn_key) + tuple(int(k) for k in key))
    else:
        seq = child_sequence(seed, *key)
    return np.random.Generator(np.random.Philox(seq))
