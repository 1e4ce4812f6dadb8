"""Counter-based random streams keyed by (seed, purpose, iteration, phase, index).

Every draw in the package comes from a stream addressed by its coordinates, so
results do not depend on call order, batch partitioning or resume points.
"""
from __future__ import annotations

import numpy as np

_PURPOSES = {
    "init": 1,
    "clean": 2,
    "corpus": 3,
    "theta": 4,
    "latent": 5,
    "batch": 6,
    "eval": 7,
    "reference": 8,
    "sw": 9,
}

_MASK64 = (1 << 64) - 1


def stream(seed: int, purpose: str, iteration: int = 0, phase: int = 0,
           index: int = 0) -> np.random.Generator:
    # the low counter word is left at zero: it is what Philox increments per draw
    key = (int(seed) & _MASK64) | (_PURPOSES[purpose] << 64)
    counter = [0, int(index) & _MASK64, int(phase) & _MASK64, int(iteration) & _MASK64]
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def sample_streams(seed: int, purpose: str, iteration: int, phase: int,
                   batch: int) -> list[np.random.Generator]:
    """One independent stream per sample in a batch."""
    return [stream(seed, purpose, iteration, phase, i) for i in range(batch)]
