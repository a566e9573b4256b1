"""Pure-numpy im2col / col2im, the fallback for the compiled kernels."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, k, stride, pad):
    C, H, W = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    Ho, Wo = win.shape[1], win.shape[2]
    # win: [C, Ho, Wo, k, k] -> [C, k, k, Ho, Wo]
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(C * k * k, Ho * Wo)


def col2im(cols, C, H, W, k, stride, pad):
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    if cols.shape != (C * k * k, Ho * Wo):
        raise ValueError("col2im: column matrix shape does not match geometry")
    cols = cols.reshape(C, k, k, Ho, Wo)
    out = np.zeros((C, H + 2 * pad, W + 2 * pad))
    for di in range(k):
        for dj in range(k):
            out[:, di:di + stride * Ho:stride, dj:dj + stride * Wo:stride] += cols[:, di, dj]
    return out[:, pad:pad + H, pad:pad + W].copy()
