"""Kernel-lane selection.

FIELDLAB_NUMBA=0 forces the pure-numpy lane; anything else (default) uses the
numba JIT lane when numba is importable. FIELDLAB_THREADS sets the size of the
thread pool used for full-frame rendering (default 1; output is bit-identical
for any value because chunk boundaries are fixed).
"""

from __future__ import annotations

import os

from .kernels import numpy_impl

_ACTIVE = None
_ACTIVE_NAME = ""


def _detect() -> tuple[object, str]:
    if os.environ.get("FIELDLAB_NUMBA", "1") == "0":
        return numpy_impl, "numpy"
    try:
        from .kernels import numba_impl
    except ImportError:
        return numpy_impl, "numpy"
    return numba_impl, "numba"


def kernels():
    """The active kernel module (numba or numpy lane)."""
    global _ACTIVE, _ACTIVE_NAME
    if _ACTIVE is None:
        _ACTIVE, _ACTIVE_NAME = _detect()
    return _ACTIVE


def lane() -> str:
    kernels()
    return _ACTIVE_NAME


def use(name: str) -> None:
    """Force a lane at runtime ('numba', 'numpy'); used by replay and bench."""
    global _ACTIVE, _ACTIVE_NAME
    if name == "numpy":
        _ACTIVE, _ACTIVE_NAME = numpy_impl, "numpy"
    elif name == "numba":
        from .kernels import numba_impl
        _ACTIVE, _ACTIVE_NAME = numba_impl, "numba"
    else:
        raise ValueError(f"unknown kernel lane: {name!r}")


def render_threads() -> int:
    try:
        return max(1, int(os.environ.get("FIELDLAB_THREADS", "1")))
    except ValueError:
        return 1
