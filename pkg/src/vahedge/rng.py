"""Reproducible random-number streams.

Every stochastic routine in the package draws from a stream keyed by a
tuple (global seed, purpose, index...).  Streams with distinct keys are
statistically independent, so scenarios can run in any order or in
parallel and still replay bit-identically.
"""

import numpy as np

# purpose tags: fixed small integers so stream keys are stable across versions
MARKET = 1
MORTALITY = 2
POLICY = 3
PRICER = 4
INIT = 5
SCENARIO = 6


def stream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the substream keyed by ``(seed, *path)``.

    Same key, same draws. Keys must be non-negative integers.
    """
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(p) for p in path)))
