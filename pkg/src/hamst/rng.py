"""Seeded, counter-based random streams.

Every random quantity is drawn from a Philox generator keyed by
``(seed, component, *indices)``, so a draw depends only on its key and not on
how many draws happened before it or on which worker produced it.
"""
from __future__ import annotations

import numpy as np

# component codes; never renumber, saved datasets depend on them
LOCATIONS = 1
INIT = 2
STEP = 3
MIXTURE = 4
INNOVATION = 5
NOISE = 6
COEF = 7
MCMC = 8
PREDICT = 9
ANNEAL = 10
CV = 11
REPLICATE = 12
RECONSTRUCT = 13


def stream(seed: int, component: int, *index: int) -> np.random.Generator:
    """Independent generator for one (component, index...) key."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(int(component),) + tuple(int(i) for i in index))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, component: int, *index: int) -> int:
    """A 64-bit seed derived from a key, for handing to another seeded routine."""
    return int(stream(seed, component, *index).integers(0, 2**63 - 1))
