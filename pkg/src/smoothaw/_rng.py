"""Seed derivation.

Every random stream in the package comes from a Philox generator (a
counter-based bit generator) keyed by ``SeedSequence([base_seed, *path])``.
Tasks therefore own independent streams that do not depend on scheduling or
worker count.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(base_seed, *path):
    """Return a 64-bit seed for the task identified by ``path``."""
    ss = np.random.SeedSequence([int(base_seed) & _MASK64, *[int(k) & _MASK64 for k in path]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(base_seed, *path):
    """Philox-backed ``Generator`` for the stream ``(base_seed, *path)``."""
    ss = np.random.SeedSequence([int(base_seed) & _MASK64, *[int(k) & _MASK64 for k in path]])
    return np.random.Generator(np.random.Philox(ss))
