"""Seeded generators.

Every random draw in the engine comes from numpy's Philox4x64 counter-based bit generator
keyed by a ``SeedSequence`` of ``(seed, *stream)``. Normal variates use numpy's ziggurat
sampler. Distinct streams (model init, corruption, shuffling, dropout) never share state.
"""
from __future__ import annotations

import numpy as np

STREAM_INIT = 1
STREAM_CORRUPTION = 2
STREAM_SHUFFLE = 3
STREAM_DROPOUT = 4
STREAM_SPLIT = 5
STREAM_SYNTHETIC = 6
STREAM_VALIDATION = 7


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(s) for s in stream)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
