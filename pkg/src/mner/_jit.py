"""numba switch.

Set ``MNER_DISABLE_JIT=1`` to run every kernel as plain numpy/Python.
The same function bodies are used either way.
"""

import os

_flag = os.environ.get("MNER_DISABLE_JIT", "").strip().lower()

try:
    import numba as nb

    JIT_ENABLED = _flag not in ("1", "true", "yes", "on")
except ImportError:  # pragma: no cover
    nb = None
    JIT_ENABLED = False


def njit(func):
    if JIT_ENABLED:
        return nb.njit(cache=True, nogil=True)(func)
    return func


def python_version(func):
    """Return the un-jitted body of a kernel."""
    return getattr(func, "py_func", func)
