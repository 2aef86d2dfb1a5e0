"""Deterministic random streams keyed by integer tuples."""

import numpy as np


def rng_for(*keys):
    """Return a Generator whose stream is a pure function of ``keys``.

    Distinct key tuples give statistically independent streams, so
    (master seed, context id, episode id) style keys never collide.
    """
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]))
