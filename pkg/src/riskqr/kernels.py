"""Backend selection for the hot numerical kernels.

The compiled ``_kernels`` extension is used when it imports cleanly; setting
``RISKQR_BACKEND=python`` forces the numpy fallback. ``BACKEND`` records the
choice made at import time.
"""
import os

from . import _kernels_py

_requested = os.environ.get("RISKQR_BACKEND", "auto").lower()

if _requested == "python":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        if _requested == "cython":
            raise
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

qr_loss_batch = _impl.qr_loss_batch
kde_pdf = _impl.kde_pdf
lidar_scan = _impl.lidar_scan


def get_backend(name):
    """Return the kernel module for ``name`` ("python" or "cython")."""
    if name == "python":
        return _kernels_py
    if name != "cython":
        raise ValueError(f"unknown kernel backend {name!r}")
    from . import _kernels
    return _kernels
