"""JIT switch for the simulation kernels.

Kernels are written as plain numpy/Python functions.  When numba is importable
and ``LEVYFLUID_DISABLE_NUMBA`` is unset they are compiled with ``numba.njit``;
otherwise the same functions run interpreted.  Both paths consume
``numpy.random.Generator`` streams identically, so results are bit-for-bit equal.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("LEVYFLUID_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

NUMBA_ENABLED = numba is not None and not _DISABLED


def jit(fn):
    """Compile ``fn`` with numba in nopython mode, or return it unchanged."""
    if not NUMBA_ENABLED:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def python_impl(fn):
    """The interpreted version of a kernel, whichever path is active."""
    return getattr(fn, "py_func", fn)
