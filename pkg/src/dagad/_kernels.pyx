# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for sparse propagation and GAT attention."""
import numpy as np

from libc.math cimport exp


def spmm(const long[::1] indptr, const long[::1] indices, const double[::1] data,
         const double[:, ::1] x):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t c = x.shape[1]
    out_arr = np.zeros((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, e, j, t
    cdef double w
    with nogil:
        for i in range(n):
            for e in range(indptr[i], indptr[i + 1]):
                j = indices[e]
                w = data[e]
                for t in range(c):
                    out[i, t] += w * x[j, t]
    return out_arr


def gat_attention_forward(const long[::1] indptr, const long[::1] indices,
                          const double[:, ::1] s_self, const double[:, ::1] s_nb,
                          const double[:, :, ::1] z, double slope):
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t heads = z.shape[1]
    cdef Py_ssize_t dim = z.shape[2]
    cdef Py_ssize_t nnz = indices.shape[0]
    alpha_arr = np.empty((nnz, heads), dtype=np.float64)
    out_arr = np.zeros((n, heads, dim), dtype=np.float64)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, e, j, h, t, lo, hi
    cdef double v, m, total, a
    with nogil:
        for i in range(n):
            lo = indptr[i]
            hi = indptr[i + 1]
            for h in range(heads):
                m = -1e308
                for e in range(lo, hi):
                    v = s_self[i, h] + s_nb[indices[e], h]
                    if v <= 0:
                        v = slope * v
                    alpha[e, h] = v
                    if v > m:
                        m = v
                total = 0.0
                for e in range(lo, hi):
                    v = exp(alpha[e, h] - m)
                    alpha[e, h] = v
                    total += v
                for e in range(lo, hi):
                    a = alpha[e, h] / total
                    alpha[e, h] = a
                    j = indices[e]
                    for t in range(dim):
                        out[i, h, t] += a * z[j, h, t]
    return alpha_arr, out_arr


def gat_attention_backward(const long[::1] indptr, const long[::1] indices,
                           const double[:, ::1] s_self, const double[:, ::1] s_nb,
                           const double[:, :, ::1] z, const double[:, ::1] alpha,
                           const double[:, :, ::1] grad_out, double slope):
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t heads = z.shape[1]
    cdef Py_ssize_t dim = z.shape[2]
    cdef Py_ssize_t nnz = indices.shape[0]
    g_self_arr = np.zeros((n, heads), dtype=np.float64)
    g_nb_arr = np.zeros((n, heads), dtype=np.float64)
    g_z_arr = np.zeros((n, heads, dim), dtype=np.float64)
    g_alpha_arr = np.empty(nnz, dtype=np.float64)
    cdef double[:, ::1] g_self = g_self_arr
    cdef double[:, ::1] g_nb = g_nb_arr
    cdef double[:, :, ::1] g_z = g_z_arr
    cdef double[::1] g_alpha = g_alpha_arr
    cdef Py_ssize_t i, e, j, h, t, lo, hi
    cdef double ga, c, a, g, pre
    with nogil:
        for i in range(n):
            lo = indptr[i]
            hi = indptr[i + 1]
            for h in range(heads):
                c = 0.0
                for e in range(lo, hi):
                    j = indices[e]
                    a = alpha[e, h]
                    ga = 0.0
                    for t in range(dim):
                        ga = ga + grad_out[i, h, t] * z[j, h, t]
                        g_z[j, h, t] += a * grad_out[i, h, t]
                    g_alpha[e] = ga
                    c = c + a * ga
                for e in range(lo, hi):
                    j = indices[e]
                    g = alpha[e, h] * (g_alpha[e] - c)
                    pre = s_self[i, h] + s_nb[j, h]
                    if pre <= 0:
                        g = slope * g
                    g_self[i, h] += g
                    g_nb[j, h] += g
    return g_self_arr, g_nb_arr, g_z_arr
