"""Seed discipline: one independent PCG64 stream per (seed, purpose, replicate) tuple."""

import numpy as np

# purpose tags keep the data, chain and stability streams of one replicate disjoint
DATA = 0
CHAIN = 1
CHAIN_PENALIZED = 2
GROUPS = 3


def stream(seed, *keys):
    """Return a ``numpy.random.Generator`` keyed on ``seed`` and any integer ``keys``.

    Two calls with the same arguments return generators producing identical
    draws; distinct key tuples give statistically independent streams.
    """
    if seed is None:
        raise ValueError("an explicit integer seed is required")
    entropy = [int(seed)] + [int(k) for k in keys]
    if any(e < 0 for e in entropy):
        raise ValueError("seed and stream keys must be non-negative integers")
    return np.random.default_rng(np.random.SeedSequence(entropy))
