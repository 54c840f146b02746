# cython: cdivision=True, initializedcheck=False
"""Compiled conv/statistics kernels. Mirrors ``_fallback`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int k, int stride, int pad):
    """Patch matrix of shape (B*Ho*Wo, C*k*k); zero-padded borders."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((B * Ho * Wo, C * k * k), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t b, c, oh, ow, i, j, row, col, ih, iw
    with nogil:
        for b in range(B):
            for oh in range(Ho):
                for ow in range(Wo):
                    row = (b * Ho + oh) * Wo + ow
                    col = 0
                    for c in range(C):
                        for i in range(k):
                            ih = oh * stride + i - pad
                            for j in range(k):
                                iw = ow * stride + j - pad
                                if 0 <= ih < H and 0 <= iw < W:
                                    out[row, col] = x[b, c, ih, iw]
                                col = col + 1
    return out_arr


def col2im(real[:, ::1] cols, tuple shape, int k, int stride, int pad):
    """Adjoint of ``im2col``: scatter-add patch rows back onto (B, C, H, W)."""
    cdef Py_ssize_t B = shape[0], C = shape[1], H = shape[2], W = shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    if cols.shape[0] != B * Ho * Wo or cols.shape[1] != C * k * k:
        raise ValueError("cols shape does not match the target geometry")
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((B, C, H, W), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, c, oh, ow, i, j, row, col, ih, iw
    with nogil:
        for b in range(B):
            for oh in range(Ho):
                for ow in range(Wo):
                    row = (b * Ho + oh) * Wo + ow
                    col = 0
                    for c in range(C):
                        for i in range(k):
                            ih = oh * stride + i - pad
                            for j in range(k):
                                iw = ow * stride + j - pad
                                if 0 <= ih < H and 0 <= iw < W:
                                    out[b, c, ih, iw] += cols[row, col]
                                col = col + 1
    return out_arr


def spatial_moments(real[:, :, :, ::1] x):
    """Two-pass per-(b, c) mean and population variance."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    mean_arr = np.empty((B, C), dtype=np.float64)
    var_arr = np.empty((B, C), dtype=np.float64)
    cdef double[:, ::1] mean = mean_arr
    cdef double[:, ::1] var = var_arr
    cdef Py_ssize_t b, c, h, w
    cdef double acc, d, n = <double>(H * W)
    with nogil:
        for b in range(B):
            for c in range(C):
                acc = 0.0
                for h in range(H):
                    for w in range(W):
                        acc = acc + x[b, c, h, w]
                acc = acc / n
                mean[b, c] = acc
                d = 0.0
                for h in range(H):
                    for w in range(W):
                        d = d + (x[b, c, h, w] - acc) * (x[b, c, h, w] - acc)
                var[b, c] = d / n
    return mean_arr, var_arr
