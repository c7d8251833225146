"""Seeding helpers.

Every stochastic operation in the toolkit takes an explicit
``numpy.random.Generator``.  PCG64 (numpy's default bit generator) has a
documented, platform-stable stream, so a (seed, params) pair reproduces the
same draws on every machine.
"""

import numpy as np


def make_rng(seed):
    """Generator from an integer seed (or pass an existing Generator through)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def child_rng(master_seed, index):
    """Independent per-item stream derived from a master seed.

    Keyed on (master, index) through SeedSequence so that different indices
    never collide across master seeds (a plain XOR of seed and index can).
    """
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(index)]))
