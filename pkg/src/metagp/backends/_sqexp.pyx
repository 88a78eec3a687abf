# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled squared-exponential hot kernels.

Fused single-pass versions of the matrix build and the reverse-mode
gradient contraction; contract identical to ``sqexp_numpy``.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

NAME = "cython"


def sqexp_matrix(cnp.ndarray X1_in, cnp.ndarray X2_in, double log_variance,
                 cnp.ndarray log_ls_in):
    cdef double[:, ::1] X1 = np.ascontiguousarray(X1_in, dtype=np.float64)
    cdef double[:, ::1] X2 = np.ascontiguousarray(X2_in, dtype=np.float64)
    cdef double[::1] log_ls = np.ascontiguousarray(log_ls_in, dtype=np.float64)
    cdef Py_ssize_t n = X1.shape[0], m = X2.shape[0], p = X1.shape[1]
    cdef cnp.ndarray out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] K = out
    cdef double[::1] inv_l2 = np.empty(p, dtype=np.float64)
    cdef double s2 = exp(log_variance)
    cdef Py_ssize_t i, j, d
    cdef double acc, diff

    for d in range(p):
        inv_l2[d] = exp(-2.0 * log_ls[d])
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for d in range(p):
                    diff = X1[i, d] - X2[j, d]
                    acc += diff * diff * inv_l2[d]
                K[i, j] = s2 * exp(-0.5 * acc)
    return out


def sqexp_vjp(cnp.ndarray X1_in, cnp.ndarray X2_in, double log_variance,
              cnp.ndarray log_ls_in, cnp.ndarray K_in, cnp.ndarray dK_in):
    cdef double[:, ::1] X1 = np.ascontiguousarray(X1_in, dtype=np.float64)
    cdef double[:, ::1] X2 = np.ascontiguousarray(X2_in, dtype=np.float64)
    cdef double[::1] log_ls = np.ascontiguousarray(log_ls_in, dtype=np.float64)
    cdef double[:, ::1] K = np.ascontiguousarray(K_in, dtype=np.float64)
    cdef double[:, ::1] dK = np.ascontiguousarray(dK_in, dtype=np.float64)
    cdef Py_ssize_t n = X1.shape[0], m = X2.shape[0], p = X1.shape[1]

    cdef cnp.ndarray d_ls_out = np.zeros(p, dtype=np.float64)
    cdef cnp.ndarray dX1_out = np.zeros((n, p), dtype=np.float64)
    cdef cnp.ndarray dX2_out = np.zeros((m, p), dtype=np.float64)
    cdef double[::1] d_ls = d_ls_out
    cdef double[:, ::1] dX1 = dX1_out
    cdef double[:, ::1] dX2 = dX2_out
    cdef double[::1] inv_l2 = np.empty(p, dtype=np.float64)
    cdef double d_lv = 0.0
    cdef Py_ssize_t i, j, d
    cdef double pij, diff, w

    for d in range(p):
        inv_l2[d] = exp(-2.0 * log_ls[d])
    with nogil:
        for i in range(n):
            for j in range(m):
                pij = dK[i, j] * K[i, j]
                d_lv += pij
                for d in range(p):
                    diff = X1[i, d] - X2[j, d]
                    w = pij * diff * inv_l2[d]
                    d_ls[d] += w * diff
                    dX1[i, d] -= w
                    dX2[j, d] += w
    return d_lv, d_ls_out, dX1_out, dX2_out
