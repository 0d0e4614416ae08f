"""Seeded random streams.

Every random draw in the package comes from a PCG64 generator whose state is
derived from a 64-bit master seed plus an integer key path through
:class:`numpy.random.SeedSequence`.  Keys are built from stable identifiers
(frame id, stage, psu position, replication number), never from call order, so
the draws for one frame do not depend on how many other frames were drawn
before it.

Key layout used across the package::

    (replication, frame_id, 1)              first-stage psu selection
    (replication, frame_id, 2, psu_index)   second-stage selection in a psu
    (0xC1,)                                 k-means initialisation
    (0x5E, ...)                             synthetic population generation
"""

from __future__ import annotations

import numpy as np

SEED_MASK = (1 << 64) - 1


def substream(seed: int, *key: int) -> np.random.Generator:
    """Return an independent generator for ``seed`` and ``key``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=seed & SEED_MASK, spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def srswor(rng: np.random.Generator, size: int, n: int) -> list[int]:
    """Draw ``n`` of ``range(size)`` without replacement by partial Fisher-Yates.

    The result is sorted so equal selections compare equal.
    """
    if not 0 <= n <= size:
        raise ValueError(f"cannot draw {n} items from {size}")
    idx = list(range(size))
    if n == 0:
        return []
    offsets = rng.integers(0, np.arange(size, size - n, -1)).tolist()
    for k, off in enumerate(offsets):
        j = k + off
        idx[k], idx[j] = idx[j], idx[k]
    return sorted(idx[:n])
