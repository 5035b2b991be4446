"""Numba on/off plumbing.

Hot kernels are written once in an array-only style and compiled with
``numba.njit`` by default.  Setting the environment variable
``IVDESIGN_NO_NUMBA=1`` (checked at call time, not import time) selects the
pure-Python execution of the very same function, which is the reference
fallback path and what ``benchmarks/bench_matching.py`` compares against.
"""

from __future__ import annotations

import os

__all__ = ["numba_disabled", "jit_or_py"]

_TRUTHY = {"1", "true", "yes", "on"}


def numba_disabled() -> bool:
    return os.environ.get("IVDESIGN_NO_NUMBA", "").strip().lower() in _TRUTHY


class jit_or_py:
    """Lazy dual dispatcher: compiles `fn` with njit on first accelerated call.

    Compilation is deferred so that pure-mode users (and the test suite run
    with IVDESIGN_NO_NUMBA=1) never pay the JIT cost.
    """

    def __init__(self, fn):
        self.py_func = fn
        self._jitted = None
        self.__name__ = fn.__name__
        self.__doc__ = fn.__doc__

    def _compile(self):
        from numba import njit

        if self._jitted is None:
            self._jitted = njit(cache=True)(self.py_func)
        return self._jitted

    def __call__(self, *args):
        if numba_disabled():
            return self.py_func(*args)
        return self._compile()(*args)
