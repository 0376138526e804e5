"""Keyed random streams.

Every random draw in the package comes from a Philox generator keyed by the
master seed plus a tuple of integers naming its purpose (and, for repeated
draws, the cell, replicate or resample index). Streams therefore do not
depend on execution order or thread count.
"""

import numpy as np

# purpose tags
DATA_STREAM = 0
BOOT_STREAM = 1
FOLD_STREAM = 2


def rng_for(seed, *keys):
    """Generator for the stream ``(seed, *keys)``; all keys are non-negative ints."""
    entropy = [int(seed)] + [int(k) for k in keys]
    if any(e < 0 for e in entropy):
        raise ValueError("seed and stream keys must be non-negative integers")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
