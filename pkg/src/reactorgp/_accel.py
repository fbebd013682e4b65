"""Optional numba acceleration.

Hot kernels are written so they run either jitted or as plain Python/numpy.
Set ``REACTORGP_DISABLE_NUMBA=1`` to force the pure-numpy path (also taken
automatically when numba cannot be imported).
"""
import os

_flag = os.environ.get("REACTORGP_DISABLE_NUMBA", "").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    import numba
except ImportError:
    numba = None

USE_NUMBA = numba is not None


def maybe_njit(fn=None, **kwargs):
    """``numba.njit`` when acceleration is on, identity otherwise."""
    opts = {"cache": True, "nogil": True}
    opts.update(kwargs)

    def wrap(f):
        if USE_NUMBA:
            return numba.njit(**opts)(f)
        return f

    if fn is None:
        return wrap
    return wrap(fn)
