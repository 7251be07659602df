"""Numba switch.

Hot kernels are written twice: a numba ``@njit`` loop version and a pure
numpy/scipy version. Set ``GESTUREPIPE_DISABLE_NUMBA=1`` to force the
fallback path (useful for debugging and for the benchmark comparison).
"""
from __future__ import annotations

import os

_FLAG = os.environ.get("GESTUREPIPE_DISABLE_NUMBA", "").strip().lower()

try:
    import numba  # noqa: F401
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
