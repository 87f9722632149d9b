"""Kernel backend selection.

The compiled extension is used when it imports; ``UKF_KERNELS=python``
forces the numpy fallback. ``BACKEND`` names the active choice.
"""
import os

from . import _kernels_py

_force_python = os.environ.get("UKF_KERNELS", "").lower() == "python"

try:
    if _force_python:
        raise ImportError("numpy kernels requested")
    from . import _kernels as _impl
    BACKEND = "compiled"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"

im2col = _impl.im2col
col2im = _impl.col2im
depthwise_forward = _impl.depthwise_forward
depthwise_backward = _impl.depthwise_backward
bspline_basis = _impl.bspline_basis


def backends():
    """Return every importable backend module keyed by name."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels
        found["compiled"] = _kernels
    except ImportError:
        pass
    return found
