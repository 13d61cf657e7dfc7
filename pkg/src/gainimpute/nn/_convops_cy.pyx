# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled conv kernels: the hot inner loop of adversarial training."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def conv2d_forward(cnp.float64_t[:, :, ::1] x,
                   cnp.float64_t[:, :, :, ::1] w,
                   cnp.float64_t[::1] b):
    cdef Py_ssize_t in_c = x.shape[0], rows = x.shape[1], cols = x.shape[2]
    cdef Py_ssize_t out_c = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t pad = k // 2
    out_arr = np.empty((out_c, rows, cols), dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t o, c, i, j, u, v, ii, jj
    cdef double acc
    for o in range(out_c):
        for i in range(rows):
            for j in range(cols):
                acc = b[o]
                for c in range(in_c):
                    for u in range(k):
                        ii = i + u - pad
                        if ii < 0 or ii >= rows:
                            continue
                        for v in range(k):
                            jj = j + v - pad
                            if 0 <= jj < cols:
                                acc += x[c, ii, jj] * w[o, c, u, v]
                out[o, i, j] = acc
    return out_arr


def conv2d_backward(cnp.float64_t[:, :, ::1] x,
                    cnp.float64_t[:, :, :, ::1] w,
                    cnp.float64_t[:, :, ::1] gout):
    cdef Py_ssize_t in_c = x.shape[0], rows = x.shape[1], cols = x.shape[2]
    cdef Py_ssize_t out_c = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t pad = k // 2
    gx_arr = np.zeros((in_c, rows, cols), dtype=np.float64)
    gw_arr = np.zeros((out_c, in_c, k, k), dtype=np.float64)
    gb_arr = np.zeros(out_c, dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] gx = gx_arr
    cdef cnp.float64_t[:, :, :, ::1] gw = gw_arr
    cdef cnp.float64_t[::1] gb = gb_arr
    cdef Py_ssize_t o, c, i, j, u, v, ii, jj
    cdef double g
    for o in range(out_c):
        for i in range(rows):
            for j in range(cols):
                g = gout[o, i, j]
                gb[o] += g
                for c in range(in_c):
                    for u in range(k):
                        ii = i + u - pad
                        if ii < 0 or ii >= rows:
                            continue
                        for v in range(k):
                            jj = j + v - pad
                            if 0 <= jj < cols:
                                gw[o, c, u, v] += x[c, ii, jj] * g
                                gx[c, ii, jj] += w[o, c, u, v] * g
    return gx_arr, gw_arr, gb_arr
