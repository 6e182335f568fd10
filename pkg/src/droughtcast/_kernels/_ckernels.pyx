# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: same-padded convolution (im2col + BLAS) and the
gradient-boosting split scan.  Semantics match droughtcast._kernels._numpy_impl;
the split scan is arithmetic-order compatible so both backends grow
identical trees."""

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm, sgemm

ctypedef fused floating:
    cnp.float32_t
    cnp.float64_t

BACKEND = "compiled"


cdef void _pack_patches(floating[:, :, :, ::1] x, floating[:, ::1] col, int k) noexcept nogil:
    # col rows follow the output raster (b, oy, ox); columns follow (ci, dy, dx).
    cdef int nb = x.shape[0], ci = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int pad = k // 2
    cdef int b, c, dy, dx, oy, ox, iy, ix, row0, colidx
    for b in range(nb):
        for c in range(ci):
            for dy in range(k):
                for dx in range(k):
                    colidx = (c * k + dy) * k + dx
                    for oy in range(h):
                        iy = oy + dy - pad
                        if iy < 0 or iy >= h:
                            continue
                        row0 = (b * h + oy) * w
                        for ox in range(w):
                            ix = ox + dx - pad
                            if 0 <= ix < w:
                                col[row0 + ox, colidx] = x[b, c, iy, ix]


cdef void _gemm_nt(floating[:, ::1] a, floating[:, ::1] b, floating[:, ::1] out) noexcept nogil:
    # out (m, n) = a (m, k) @ b (n, k)^T for C-contiguous inputs.
    # In column-major BLAS terms: out^T = b^T_colmajor-as-(k,n) ... expressed as
    # sgemm("t", "n"): C(n x m) = B(k x n)^T? We compute out^T = (a @ b^T)^T = b @ a^T,
    # i.e. column-major C = op(A) * op(B) with A = b (k x n col-major), B = a (k x m col-major).
    cdef int m = a.shape[0], n = b.shape[0], kk = a.shape[1]
    cdef float alpha_s = 1.0, beta_s = 0.0
    cdef double alpha_d = 1.0, beta_d = 0.0
    if floating is cnp.float32_t:
        sgemm("t", "n", &n, &m, &kk, &alpha_s,
              <float*> &b[0, 0], &kk, <float*> &a[0, 0], &kk,
              &beta_s, <float*> &out[0, 0], &n)
    else:
        dgemm("t", "n", &n, &m, &kk, &alpha_d,
              <double*> &b[0, 0], &kk, <double*> &a[0, 0], &kk,
              &beta_d, <double*> &out[0, 0], &n)


def conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w, floating[::1] b):
    """Same-padded 2-D cross-correlation: (B,Ci,H,W) x (Co,Ci,k,k) -> (B,Co,H,W)."""
    cdef int nb = x.shape[0], h = x.shape[2], wd = x.shape[3]
    cdef int co = w.shape[0], k = w.shape[2]
    cdef int n = nb * h * wd, d = w.shape[1] * k * k
    dtype = np.float32 if floating is cnp.float32_t else np.float64
    col_arr = np.zeros((n, d), dtype=dtype)
    y_arr = np.empty((n, co), dtype=dtype)
    w_arr = np.ascontiguousarray(np.asarray(w).reshape(co, d))
    cdef floating[:, ::1] col = col_arr
    cdef floating[:, ::1] y2 = y_arr
    cdef floating[:, ::1] w2 = w_arr
    cdef int i, j
    with nogil:
        _pack_patches(x, col, k)
        _gemm_nt(col, w2, y2)
        for i in range(n):
            for j in range(co):
                y2[i, j] += b[j]
    return np.ascontiguousarray(y_arr.reshape(nb, h, wd, co).transpose(0, 3, 1, 2))


def conv2d_grad_weights(floating[:, :, :, ::1] x, floating[:, :, :, ::1] gy, int k):
    """Kernel gradient of conv2d_forward: (B,Ci,H,W), (B,Co,H,W) -> (Co,Ci,k,k)."""
    cdef int nb = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef int co = gy.shape[1]
    cdef int n = nb * h * wd, d = ci * k * k
    dtype = np.float32 if floating is cnp.float32_t else np.float64
    col_arr = np.zeros((n, d), dtype=dtype)
    gw_arr = np.empty((co, d), dtype=dtype)
    gy2_arr = np.ascontiguousarray(np.asarray(gy).transpose(0, 2, 3, 1).reshape(n, co))
    cdef floating[:, ::1] col = col_arr
    cdef floating[:, ::1] gw2 = gw_arr
    cdef floating[:, ::1] gy2 = gy2_arr
    with nogil:
        _pack_patches(x, col, k)
        # gw (co, d) = gy2 (n, co)^T @ col (n, d): use out = a @ b^T with a = gy2^T.
        _gemm_tn(gy2, col, gw2)
    return gw_arr.reshape(co, ci, k, k)


cdef void _gemm_tn(floating[:, ::1] a, floating[:, ::1] b, floating[:, ::1] out) noexcept nogil:
    # out (m, n) = a (k, m)^T @ b (k, n) for C-contiguous inputs.
    cdef int kk = a.shape[0], m = a.shape[1], n = b.shape[1]
    cdef float alpha_s = 1.0, beta_s = 0.0
    cdef double alpha_d = 1.0, beta_d = 0.0
    if floating is cnp.float32_t:
        sgemm("n", "t", &n, &m, &kk, &alpha_s,
              <float*> &b[0, 0], &n, <float*> &a[0, 0], &m,
              &beta_s, <float*> &out[0, 0], &n)
    else:
        dgemm("n", "t", &n, &m, &kk, &alpha_d,
              <double*> &b[0, 0], &n, <double*> &a[0, 0], &m,
              &beta_d, <double*> &out[0, 0], &n)


def split_scan(cnp.float64_t[::1] values, cnp.float64_t[::1] grads, cnp.float64_t[::1] hess,
               double reg_lambda, double gamma, double min_child_weight):
    """Best threshold of one pre-sorted feature; see the numpy twin for the contract."""
    cdef int n = values.shape[0]
    if n < 2:
        return None
    cdef double g_tot = 0.0, h_tot = 0.0
    cdef int i
    for i in range(n):
        g_tot += grads[i]
        h_tot += hess[i]
    cdef double parent = g_tot * g_tot / (h_tot + reg_lambda)
    cdef double gl = 0.0, hl = 0.0, gr, hr, gain, left, right
    cdef double best_gain = 0.0, best_thr = 0.0
    cdef int best_nl = -1
    for i in range(n - 1):
        gl += grads[i]
        hl += hess[i]
        if values[i] >= values[i + 1]:
            continue
        if hl < min_child_weight:
            continue
        gr = g_tot - gl
        hr = h_tot - hl
        if hr < min_child_weight:
            continue
        left = gl * gl / (hl + reg_lambda)
        right = gr * gr / (hr + reg_lambda)
        gain = 0.5 * (left + right - parent) - gamma
        if gain > best_gain and gain > 0.0:
            best_gain = gain
            best_thr = 0.5 * (values[i] + values[i + 1])
            best_nl = i + 1
    if best_nl < 0:
        return None
    return best_gain, best_thr, best_nl
