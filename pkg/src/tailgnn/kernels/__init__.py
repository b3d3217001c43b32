"""Kernel backend selection.

The numpy backend routes each kernel tap through BLAS and is the faster
choice at every realistic layer width (see benchmarks/bench_kernels.py),
so it is the default. The compiled extension is kept as an independent
reference implementation; opt in with TAILGNN_BACKEND=cython. Setting
TAILGNN_PURE=1 forces numpy regardless.
"""

import os

from tailgnn.kernels import fallback

_impl = fallback
if (os.environ.get("TAILGNN_BACKEND") == "cython"
        and not os.environ.get("TAILGNN_PURE")):
    try:
        from tailgnn.kernels import _core as _impl
    except ImportError:
        _impl = fallback

conv1d_forward = _impl.conv1d_forward
if _impl is fallback:
    conv1d_backward = _impl.conv1d_backward
else:
    def conv1d_backward(xpad, w, dout, dilation, need_dx=True):
        # the compiled kernel always materializes the input gradient
        return _impl.conv1d_backward(xpad, w, dout, dilation)
BACKEND = _impl.BACKEND


def backend_name():
    return BACKEND
