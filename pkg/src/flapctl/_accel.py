"""JIT switch for the numeric kernels.

Kernels are written once in a numba-compatible subset of Python. When numba
is importable and ``FLAPCTL_DISABLE_NUMBA`` is unset (or ``0``), they are
compiled with ``numba.njit``; otherwise the same source runs under the
interpreter on plain numpy arrays. ``python -m flapctl.benchmark`` times both.
"""
from __future__ import annotations

import os

_FLAG = os.environ.get("FLAPCTL_DISABLE_NUMBA", "0").strip().lower()
DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if DISABLED:
        raise ImportError
    import numba as _numba

    NUMBA_ENABLED = True
except ImportError:  # pragma: no cover - exercised via the env flag
    _numba = None
    NUMBA_ENABLED = False


def njit(fn=None, **kwargs):
    """``numba.njit(cache=True, nogil=True)`` or identity when disabled."""
    opts = {"cache": True, "nogil": True}
    opts.update(kwargs)

    def wrap(f):
        if not NUMBA_ENABLED:
            f.py_func = f
            return f
        return _numba.njit(**opts)(f)

    if fn is not None:
        return wrap(fn)
    return wrap


def python_impl(kernel):
    """Return the interpreted version of a kernel regardless of the flag."""
    return getattr(kernel, "py_func", kernel)
