# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im for single-image [C, H, W] convolution."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const double[:, :, ::1] x, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    out_arr = np.zeros((C * k * k, Ho * Wo), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t c, di, dj, oi, oj, row, ii, jj
    with nogil:
        for c in range(C):
            for di in range(k):
                for dj in range(k):
                    row = (c * k + di) * k + dj
                    for oi in range(Ho):
                        ii = oi * stride + di - pad
                        if ii < 0 or ii >= H:
                            continue
                        for oj in range(Wo):
                            jj = oj * stride + dj - pad
                            if jj < 0 or jj >= W:
                                continue
                            out[row, oi * Wo + oj] = x[c, ii, jj]
    return out_arr


def col2im(const double[:, ::1] cols, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W,
           Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    if cols.shape[0] != C * k * k or cols.shape[1] != Ho * Wo:
        raise ValueError("col2im: column matrix shape does not match geometry")
    out_arr = np.zeros((C, H, W), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t c, di, dj, oi, oj, row, ii, jj
    with nogil:
        for c in range(C):
            for di in range(k):
                for dj in range(k):
                    row = (c * k + di) * k + dj
                    for oi in range(Ho):
                        ii = oi * stride + di - pad
                        if ii < 0 or ii >= H:
                            continue
                        for oj in range(Wo):
                            jj = oj * stride + dj - pad
                            if jj < 0 or jj >= W:
                                continue
                            out[c, ii, jj] += cols[row, oi * Wo + oj]
    return out_arr
