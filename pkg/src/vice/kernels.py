"""Kernel dispatch: compiled extension when available, numpy otherwise.

Set ``VICE_PURE_PYTHON=1`` to force the fallback (used by the benchmark and
by the backend-parity tests).
"""

from __future__ import annotations

import os

from . import _kernels_py

_compiled = None
if os.environ.get("VICE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py

distort_points = _impl.distort_points
undistort_points = _impl.undistort_points
zbuffer = _impl.zbuffer


def backends():
    """Map backend name to kernel module for every importable backend."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        found["cython"] = _kernels
    return found
