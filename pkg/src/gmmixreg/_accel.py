"""Optional numba acceleration.

Kernels in :mod:`gmmixreg._kernels` are written in the subset of numpy that
numba can compile.  When numba is importable and ``MIXREG_NUMBA`` is not set to
a false value they are compiled with ``njit``; otherwise the same functions run
as plain numpy code.  Either way the undecorated function is reachable through
``kernel.py_func`` so both paths can be exercised in one process.
"""

import os
from typing import Any, Callable

_FALSE = {"0", "false", "no", "off"}

try:
    import numba
except ImportError:  # pragma: no cover - numba is a soft dependency
    numba = None

NUMBA_ENABLED = numba is not None and os.environ.get("MIXREG_NUMBA", "1").strip().lower() not in _FALSE


def jit(func: Callable[..., Any]) -> Callable[..., Any]:
    if NUMBA_ENABLED:
        return numba.njit(cache=True)(func)
    func.py_func = func
    return func


def backend() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
