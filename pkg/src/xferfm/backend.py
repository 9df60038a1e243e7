"""Kernel backend selection.

The hot loops in :mod:`xferfm.kernels` are written as plain Python over numpy
arrays and compiled with numba by default.  Setting the environment variable
``XFERFM_DISABLE_NUMBA=1`` before import skips compilation and runs the same
functions interpreted, which is slow but useful for debugging and for
environments without a working numba.  Arithmetic order is identical in both
modes, so results are bit-for-bit the same.
"""

import os

DISABLE_NUMBA = os.environ.get("XFERFM_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")

if not DISABLE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover
        DISABLE_NUMBA = True

NUMBA_ENABLED = not DISABLE_NUMBA


def jit(func):
    """Compile ``func`` with numba unless the fallback mode is active."""
    if NUMBA_ENABLED:
        return numba.njit(cache=True, nogil=True)(func)
    return func
