"""Deterministic RNG stream derivation.

All randomness in the package flows from a single integer seed. Independent
streams are derived with ``numpy.random.SeedSequence`` spawn keys, so the
stream consumed by (say) bootstrap repeat 17 of patch 42 for subject 3 is
the same whether repeats run serially, in any order, or on worker threads.
"""

import numpy as np


def spawn_rng(seed: int, *key: int) -> np.random.Generator:
    """Return a generator for the stream identified by ``key`` under ``seed``.

    The same (seed, key) pair always yields an identical stream; distinct
    keys yield statistically independent streams.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
