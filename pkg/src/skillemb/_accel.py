"""Optional numba acceleration.

Kernels in :mod:`skillemb.kernels` are written twice: a loop version compiled
with ``numba.njit`` and a vectorized numpy version. Set
``SKILLEMB_DISABLE_NUMBA=1`` to force the numpy path (also used automatically
when numba is not importable).
"""

import os

_FLAG = "SKILLEMB_DISABLE_NUMBA"

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except Exception:  # pragma: no cover - numba is a declared dependency
    _njit = None
    HAVE_NUMBA = False


def numba_enabled() -> bool:
    if not HAVE_NUMBA:
        return False
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when available, else an identity decorator."""
    if HAVE_NUMBA:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
