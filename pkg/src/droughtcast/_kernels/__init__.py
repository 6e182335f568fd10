"""Hot-kernel backend selection.

The compiled Cython extension is preferred when present; the numpy
implementation is the fallback and the behavioural reference.  Set
DROUGHTCAST_FORCE_NUMPY=1 to force the fallback (used by the benchmark
and the backend-parity tests).
"""

import os

import numpy as np

from . import _numpy_impl

if os.environ.get("DROUGHTCAST_FORCE_NUMPY", "") == "1":
    _impl = _numpy_impl
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _numpy_impl

BACKEND = _impl.BACKEND

conv2d_forward = _impl.conv2d_forward
conv2d_grad_weights = _impl.conv2d_grad_weights
split_scan = _impl.split_scan


def conv2d_grad_input(gy, w):
    """Input gradient of conv2d_forward, via the forward kernel.

    gy: (B, Cout, H, W); w: (Cout, Cin, k, k) -> (B, Cin, H, W).
    Cross-correlation adjoint = forward pass with the kernel transposed on
    channel axes and flipped on both spatial axes.
    """
    w_adj = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    zeros = np.zeros(w_adj.shape[0], dtype=gy.dtype)
    return conv2d_forward(gy, w_adj, zeros)
