"""Numba switch.

Set ``GZIM_PURE_NUMPY=1`` to force every kernel onto its numpy fallback
(useful for debugging and for the benchmark in ``benchmarks/``).
"""
import os

_FLAG = os.environ.get("GZIM_PURE_NUMPY", "").strip().lower()
PURE_NUMPY = _FLAG not in ("", "0", "false", "no")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not PURE_NUMPY


def njit(*args, **kwargs):
    """``numba.njit`` with caching on; a no-op decorator when numba is absent."""
    kwargs.setdefault("cache", True)
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


def pick(fast, slow):
    """Return the numba kernel unless the pure-numpy path is requested."""
    return fast if USE_NUMBA else slow
