"""Optional numba acceleration.

Kernels are written once as plain numpy/python loops and wrapped with
:func:`njit`.  Setting ``RISKAC_DISABLE_NUMBA=1`` (or running without numba
installed) leaves them as ordinary python functions.  Compiled dispatchers
keep the uncompiled function on ``.py_func``, which the benchmark uses to
time both paths in one process.
"""
import os

_DISABLED = os.environ.get("RISKAC_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    import numba

    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False


def njit(func=None, **kwargs):
    """``numba.njit(cache=True)`` when enabled, identity otherwise."""
    if func is None:
        return lambda f: njit(f, **kwargs)
    if not HAS_NUMBA:
        func.py_func = func
        return func
    kwargs.setdefault("cache", True)
    return numba.njit(**kwargs)(func)


def python_impl(func):
    """Uncompiled version of a kernel."""
    return getattr(func, "py_func", func)
