"""Switch between numba-compiled kernels and the plain Python/numpy path.

Set ``MAGNETOLAB_DISABLE_NUMBA=1`` before import to run every kernel as
ordinary Python. ``MAGNETOLAB_THREADS`` caps the worker pool used for
batches of independent integrations.
"""

import os
from concurrent.futures import ThreadPoolExecutor

NUMBA_DISABLED = os.environ.get("MAGNETOLAB_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if NUMBA_DISABLED:
        raise ImportError
    import numba as _nb

    HAVE_NUMBA = True
except ImportError:
    _nb = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available and enabled, identity otherwise."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        return _nb.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def identity(fn):
        return fn

    return identity


def backend():
    return "numba" if HAVE_NUMBA else "python"


def max_threads():
    try:
        n = int(os.environ.get("MAGNETOLAB_THREADS", "0"))
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def parallel_map(fn, items):
    """Ordered map over ``items``; threads only help when kernels release the GIL."""
    items = list(items)
    n = min(max_threads(), len(items))
    if n <= 1 or not HAVE_NUMBA:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
