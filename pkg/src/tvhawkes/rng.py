"""Reproducible, splittable random streams.

Every replication, table cell or path owns a Philox stream keyed by
``(base_seed, *keys)``; the same key always yields the same stream and
distinct keys give statistically independent streams regardless of the
order or process in which they are consumed.
"""
import numpy as np


def stream(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, *keys: int) -> int:
    """A 64-bit integer seed derived from (seed, *keys)."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
