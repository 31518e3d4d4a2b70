"""Backend selection for the hot kernels.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
numpy versions in ``_pykernels`` are used. Setting ``FITROOM_PURE_PYTHON=1``
forces the fallback.
"""

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def available_backends():
    """Map of backend name to kernel module, compiled first when present."""
    found = {}
    if _ckernels is not None:
        found["cython"] = _ckernels
    found["python"] = _pykernels
    return found


def _select():
    if os.environ.get("FITROOM_PURE_PYTHON", "") not in ("", "0") or _ckernels is None:
        return _pykernels
    return _ckernels


_impl = _select()
BACKEND = _impl.BACKEND

conv_out_size = _impl.conv_out_size
conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
rasterize_polygon = _impl.rasterize_polygon
roi_align = _impl.roi_align
nms = _impl.nms
