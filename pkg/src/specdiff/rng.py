"""Reproducible random substreams.

All randomness comes from numpy's Philox4x64-10, a counter-based
generator. A substream is identified by ``(seed, purpose, index)``, mapped
through ``SeedSequence`` spawn keys, so block ``index`` of a simulation
draws the same numbers no matter which thread runs it or in what order.
"""

from __future__ import annotations

import numpy as np

__all__ = ["PURPOSES", "substream", "validate_seed"]

PURPOSES = {
    "trajectory": 1,
    "photons": 2,
    "poisson": 3,
    "replica": 4,
}


def validate_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def substream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Independent generator for block ``index`` of a given purpose."""
    ss = np.random.SeedSequence(entropy=validate_seed(seed), spawn_key=(PURPOSES[purpose], int(index)))
    return np.random.Generator(np.random.Philox(ss))
