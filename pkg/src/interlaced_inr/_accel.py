"""Backend selection for the compiled kernels.

Set ``INTERLACED_INR_BACKEND=numpy`` to bypass numba entirely (useful for
debugging, coverage runs, or platforms without an LLVM toolchain). Any other
value, or an unset variable, uses numba when it imports cleanly.
"""

from __future__ import annotations

import os

_requested = os.environ.get("INTERLACED_INR_BACKEND", "numba").strip().lower()

try:
    if _requested == "numpy":
        raise ImportError("numba disabled by INTERLACED_INR_BACKEND")
    import numba as _numba

    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # skip the TBB probe, which warns on older TBB installs
        _numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:
    _numba = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAVE_NUMBA:
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


prange = _numba.prange if HAVE_NUMBA else range
