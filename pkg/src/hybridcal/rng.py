"""Seedable, counter-based random streams.

Philox keys are derived from a base seed plus named sub-stream indices, so
any component (per-pose sampling, per-trial Monte Carlo, RANSAC hypotheses)
gets an independent stream that is bit-reproducible across platforms and
insensitive to evaluation order.
"""

import numpy as np

_MASK = (1 << 64) - 1
_MIX = 0x9E3779B97F4A7C15


def stream_rng(seed: int, *streams: int) -> np.random.Generator:
    """Generator for sub-stream ``streams`` of the given base ``seed``."""
    h = 0
    for s in streams:
        h = (h ^ ((s & _MASK) + _MIX + ((h << 6) & _MASK) + (h >> 2))) & _MASK
    key = np.array([seed & _MASK, h], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
