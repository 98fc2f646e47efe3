"""Kernel backend selection.

The compiled extension is used when importable; set ``HINAS_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

if os.environ.get("HINAS_PURE_PYTHON", "") not in ("", "0"):
    from . import _pykernels as _impl
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _pykernels as _impl
        BACKEND = "python"

im2col = _impl.im2col
col2im = _impl.col2im
depthwise_forward = _impl.depthwise_forward
depthwise_backward = _impl.depthwise_backward
