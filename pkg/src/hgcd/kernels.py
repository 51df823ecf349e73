"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it was built; otherwise, or
when ``HGCD_PURE_PYTHON=1`` is set, the numpy fallback is used.
"""

import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("HGCD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

hungarian = _impl.hungarian
assign_nearest = _impl.assign_nearest
centroid_update = _impl.centroid_update

__all__ = ["BACKEND", "hungarian", "assign_nearest", "centroid_update"]
