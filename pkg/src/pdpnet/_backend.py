"""Selects the numba or the pure-numpy code path for the hot kernels.

Set ``PDPNET_DISABLE_NUMBA=1`` in the environment to force the numpy path.
If numba cannot be imported the numpy path is used regardless.
"""
import os
import warnings

_DISABLED = os.environ.get("PDPNET_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba ships with the default install
    _numba = None
    if not _DISABLED:
        warnings.warn("numba is not installed - falling back to numpy kernels")

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and not _DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` with nogil and on-disk caching, or a passthrough."""
    if _numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    return _numba.njit(*args, **kwargs)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
