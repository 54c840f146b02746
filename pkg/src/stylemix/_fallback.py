"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def im2col(x, k, stride, pad):
    B, C, H, W = x.shape
    Ho, Wo = _out_size(H, k, stride, pad), _out_size(W, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else np.ascontiguousarray(x)
    sB, sC, sH, sW = xp.strides
    win = as_strided(
        xp,
        shape=(B, Ho, Wo, C, k, k),
        strides=(sB, sH * stride, sW * stride, sC, sH, sW),
        writeable=False,
    )
    return win.reshape(B * Ho * Wo, C * k * k)


def col2im(cols, shape, k, stride, pad):
    B, C, H, W = shape
    Ho, Wo = _out_size(H, k, stride, pad), _out_size(W, k, stride, pad)
    if cols.shape != (B * Ho * Wo, C * k * k):
        raise ValueError("cols shape does not match the target geometry")
    patches = cols.reshape(B, Ho, Wo, C, k, k).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += patches[:, :, i, j]
    if pad:
        out = out[:, :, pad:pad + H, pad:pad + W]
    return np.ascontiguousarray(out)


def spatial_moments(x):
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=(2, 3))
    var = ((x - mean[:, :, None, None]) ** 2).mean(axis=(2, 3))
    return mean, var
