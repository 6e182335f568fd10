"""Numpy reference implementations of the hot kernels.

These are the fallback used when the compiled extension is unavailable
(and the ground truth the extension is tested against).  Convolutions are
im2col + matmul; the split scan mirrors the sequential accumulation order
of the compiled scan so both backends select bit-identical splits.
"""

import numpy as np

BACKEND = "numpy"


def _im2col(x, k):
    """(B, C, H, W) -> (B*H*W, C*k*k) patches, zero-padded 'same'."""
    b, c, h, w = x.shape
    pad = k // 2
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    xp[:, :, pad : pad + h, pad : pad + w] = x
    s = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, k, k, h, w),
        strides=(s[0], s[1], s[2], s[3], s[2], s[3]),
        writeable=False,
    )
    # (B, H, W, C, k, k) -> rows ordered like the output raster
    return view.transpose(0, 4, 5, 1, 2, 3).reshape(b * h * w, c * k * k)


def conv2d_forward(x, w, b):
    """Same-padded 2-D cross-correlation.

    x: (B, Cin, H, W); w: (Cout, Cin, k, k); b: (Cout,) -> (B, Cout, H, W).
    """
    bs, _, h, wd = x.shape
    co = w.shape[0]
    k = w.shape[2]
    col = _im2col(x, k)
    y = col @ w.reshape(co, -1).T
    y += b[None, :]
    return np.ascontiguousarray(y.reshape(bs, h, wd, co).transpose(0, 3, 1, 2))


def conv2d_grad_weights(x, gy, k):
    """Gradient of conv2d_forward w.r.t. the kernel tensor.

    x: (B, Cin, H, W); gy: (B, Cout, H, W) -> (Cout, Cin, k, k).
    """
    bs, ci, h, wd = x.shape
    co = gy.shape[1]
    col = _im2col(x, k)
    gy2 = gy.transpose(0, 2, 3, 1).reshape(bs * h * wd, co)
    gw = gy2.T @ col
    return np.ascontiguousarray(gw.reshape(co, ci, k, k))


def split_scan(values, grads, hess, reg_lambda, gamma, min_child_weight):
    """Best threshold of one feature, samples pre-sorted by value ascending.

    Gain for a split after position i (0-based, left = values[:i+1]):
        0.5 * (GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam)) - gamma
    Candidates between equal adjacent values are skipped, as are children
    whose hessian mass falls below min_child_weight.  Ties keep the lowest
    threshold.  Returns (gain, threshold, n_left) or None when no candidate
    has gain > 0.
    """
    n = values.shape[0]
    if n < 2:
        return None
    gl = np.cumsum(grads, dtype=np.float64)[:-1]
    hl = np.cumsum(hess, dtype=np.float64)[:-1]
    g_tot = float(np.cumsum(grads, dtype=np.float64)[-1])
    h_tot = float(np.cumsum(hess, dtype=np.float64)[-1])
    gr = g_tot - gl
    hr = h_tot - hl
    parent = g_tot * g_tot / (h_tot + reg_lambda)
    gain = 0.5 * (gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - parent) - gamma
    ok = (
        (values[:-1] < values[1:])
        & (hl >= min_child_weight)
        & (hr >= min_child_weight)
        & (gain > 0.0)
    )
    if not ok.any():
        return None
    idx = np.flatnonzero(ok)
    best = idx[np.argmax(gain[idx])]  # np.argmax keeps the first (lowest threshold) on ties
    threshold = 0.5 * (float(values[best]) + float(values[best + 1]))
    return float(gain[best]), threshold, int(best + 1)
