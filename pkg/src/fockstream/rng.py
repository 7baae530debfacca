"""Counter-based random streams for reproducible trajectory ensembles.

Path ``i`` of a run with master seed ``s`` draws from a Philox-4x64 stream
keyed by the 128-bit integer ``(i << 64) | s``. Streams are independent of
how paths are batched or distributed across workers.
"""
from __future__ import annotations

import numpy as np

SEED_MASK = (1 << 64) - 1

SCHEME = "philox4x64; key = (path_index << 64) | (seed mod 2**64); counter starts at 0"


def path_generator(seed, index):
    key = ((int(index) & SEED_MASK) << 64) | (int(seed) & SEED_MASK)
    return np.random.Generator(np.random.Philox(key=key))


def path_uniforms(seed, indices, size):
    """First ``size`` uniforms of each listed path stream, shape (len(indices), size)."""
    return np.array([path_generator(seed, i).random(size) for i in indices]).reshape(len(indices), size)
