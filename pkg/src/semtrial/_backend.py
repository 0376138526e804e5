"""Kernel backend selection.

Hot loops are written in the numba-compatible subset of numpy. With numba
installed they are compiled with ``@njit``; setting ``SEMTRIAL_DISABLE_NUMBA=1``
before import runs the identical source as plain numpy/Python instead.
"""

import os

ENV_FLAG = "SEMTRIAL_DISABLE_NUMBA"


def _flag_set():
    return os.environ.get(ENV_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

NUMBA_ENABLED = numba is not None and not _flag_set()

if NUMBA_ENABLED:
    prange = numba.prange
    # TBB needs a newer runtime than many distributions ship; choose a layer
    # that is always present unless the user picked one.
    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER = "workqueue"

    def njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        if len(args) == 1 and callable(args[0]):
            return numba.njit(**kwargs)(args[0])
        return numba.njit(*args, **kwargs)

else:
    prange = range

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f


def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"


def set_threads(n):
    """Set kernel thread count; returns the count actually in effect."""
    if not NUMBA_ENABLED:
        return 1
    if n is None or n <= 0:
        n = numba.config.NUMBA_NUM_THREADS
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n
