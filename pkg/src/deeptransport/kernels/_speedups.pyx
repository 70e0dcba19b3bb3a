# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels.

Same contracts as kernels.pure, element for element: fused single-pass
loops instead of chained numpy temporaries. Accumulation orders match
the pure backend (sequential in sample index), keeping results
reproducible and, for the non-transcendental kernels, bit-identical
across backends.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp as cexp
from libc.math cimport sqrt as csqrt
from libc.math cimport tanh as ctanh

cnp.import_array()

NAME = "compiled"


def gather_sum(tables, idx):
    """out[i] = sum_k tables[k, idx[i, k]]; tables (K, V, m), idx (n, K)."""
    cdef double[:, :, ::1] t = np.ascontiguousarray(tables, dtype=np.float64)
    cdef cnp.intp_t[:, ::1] ix = np.ascontiguousarray(idx, dtype=np.intp)
    cdef Py_ssize_t n = ix.shape[0], K = ix.shape[1], m = t.shape[2]
    out_arr = np.zeros((n, m))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, j, row
    with nogil:
        for i in range(n):
            for k in range(K):
                row = ix[i, k]
                for j in range(m):
                    out[i, j] += t[k, row, j]
    return out_arr


def gather_sum_backward(dout, idx, n_tables, vocab):
    """Scatter-add adjoint of gather_sum -> (K, V, m)."""
    cdef double[:, ::1] g = np.ascontiguousarray(dout, dtype=np.float64)
    cdef cnp.intp_t[:, ::1] ix = np.ascontiguousarray(idx, dtype=np.intp)
    cdef Py_ssize_t n = ix.shape[0], K = n_tables, m = g.shape[1]
    dt_arr = np.zeros((n_tables, vocab, m))
    cdef double[:, :, ::1] dt = dt_arr
    cdef Py_ssize_t i, k, j, row
    with nogil:
        for k in range(K):
            for i in range(n):
                row = ix[i, k]
                for j in range(m):
                    dt[k, row, j] += g[i, j]
    return dt_arr


def lstm_gates(z, c_prev):
    """Gate nonlinearities + cell update; returns (h, c, gates, tc)."""
    cdef double[:, ::1] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef double[:, ::1] cp = np.ascontiguousarray(c_prev, dtype=np.float64)
    cdef Py_ssize_t n = zz.shape[0], d = cp.shape[1]
    h_arr = np.empty((n, d))
    c_arr = np.empty((n, d))
    gates_arr = np.empty((n, 4 * d))
    tc_arr = np.empty((n, d))
    cdef double[:, ::1] h = h_arr
    cdef double[:, ::1] c = c_arr
    cdef double[:, ::1] gates = gates_arr
    cdef double[:, ::1] tc = tc_arr
    cdef Py_ssize_t i, j
    cdef double cbar, o, ig, f, cc, t
    with nogil:
        for i in range(n):
            for j in range(d):
                cbar = ctanh(zz[i, j])
                o = 1.0 / (1.0 + cexp(-zz[i, d + j]))
                ig = 1.0 / (1.0 + cexp(-zz[i, 2 * d + j]))
                f = 1.0 / (1.0 + cexp(-zz[i, 3 * d + j]))
                cc = cbar * ig + cp[i, j] * f
                t = ctanh(cc)
                gates[i, j] = cbar
                gates[i, d + j] = o
                gates[i, 2 * d + j] = ig
                gates[i, 3 * d + j] = f
                c[i, j] = cc
                tc[i, j] = t
                h[i, j] = o * t
    return h_arr, c_arr, gates_arr, tc_arr


def lstm_gates_backward(dh, dc_in, gates, tc, c_prev):
    """Adjoint of lstm_gates; returns (dz, dc_prev)."""
    cdef double[:, ::1] gh = np.ascontiguousarray(dh, dtype=np.float64)
    cdef double[:, ::1] gc = np.ascontiguousarray(dc_in, dtype=np.float64)
    cdef double[:, ::1] ga = np.ascontiguousarray(gates, dtype=np.float64)
    cdef double[:, ::1] tt = np.ascontiguousarray(tc, dtype=np.float64)
    cdef double[:, ::1] cp = np.ascontiguousarray(c_prev, dtype=np.float64)
    cdef Py_ssize_t n = gh.shape[0], d = cp.shape[1]
    dz_arr = np.empty((n, 4 * d))
    dcp_arr = np.empty((n, d))
    cdef double[:, ::1] dz = dz_arr
    cdef double[:, ::1] dcp = dcp_arr
    cdef Py_ssize_t i, j
    cdef double cbar, o, ig, f, t, dc
    with nogil:
        for i in range(n):
            for j in range(d):
                cbar = ga[i, j]
                o = ga[i, d + j]
                ig = ga[i, 2 * d + j]
                f = ga[i, 3 * d + j]
                t = tt[i, j]
                dc = gc[i, j] + gh[i, j] * o * (1.0 - t * t)
                dz[i, j] = dc * ig * (1.0 - cbar * cbar)
                dz[i, d + j] = gh[i, j] * t * o * (1.0 - o)
                dz[i, 2 * d + j] = dc * cbar * ig * (1.0 - ig)
                dz[i, 3 * d + j] = dc * cp[i, j] * f * (1.0 - f)
                dcp[i, j] = dc * f
    return dz_arr, dcp_arr


def masked_max_pool(x, mask):
    """Column max over valid rows, first-index ties; dead rows pool to 0."""
    cdef double[:, :, ::1] xx = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.uint8_t[:, ::1] mm = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t n = xx.shape[0], l = xx.shape[1], d = xx.shape[2]
    out_arr = np.zeros((n, d))
    arg_arr = np.full((n, d), -1, dtype=np.intp)
    cdef double[:, ::1] out = out_arr
    cdef cnp.intp_t[:, ::1] arg = arg_arr
    cdef Py_ssize_t i, r, j
    cdef double v
    with nogil:
        for i in range(n):
            for j in range(d):
                for r in range(l):
                    if mm[i, r]:
                        v = xx[i, r, j]
                        if arg[i, j] < 0 or v > out[i, j]:
                            out[i, j] = v
                            arg[i, j] = r
    return out_arr, arg_arr


def masked_max_pool_backward(dout, arg, n_rows):
    """Scatter pooled gradients to the winning rows -> (n, l, d)."""
    cdef double[:, ::1] g = np.ascontiguousarray(dout, dtype=np.float64)
    cdef cnp.intp_t[:, ::1] a = np.ascontiguousarray(arg, dtype=np.intp)
    cdef Py_ssize_t n = g.shape[0], d = g.shape[1], l = n_rows
    dx_arr = np.zeros((n, l, d))
    cdef double[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(n):
            for j in range(d):
                if a[i, j] >= 0:
                    dx[i, a[i, j], j] = g[i, j]
    return dx_arr


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    """Bias-corrected Adam step in place; t is 1-based."""
    cdef double[::1] p1 = param.reshape(-1)
    cdef double[::1] g1 = np.ascontiguousarray(grad, dtype=np.float64).reshape(-1)
    cdef double[::1] m1 = m.reshape(-1)
    cdef double[::1] v1 = v.reshape(-1)
    cdef double b1 = beta1, b2 = beta2, e = eps, a = lr
    cdef double c1 = 1.0 - beta1 ** t, c2 = 1.0 - beta2 ** t
    cdef Py_ssize_t i, n = p1.shape[0]
    cdef double mh, vh
    with nogil:
        for i in range(n):
            m1[i] = b1 * m1[i] + (1.0 - b1) * g1[i]
            v1[i] = b2 * v1[i] + (1.0 - b2) * g1[i] * g1[i]
            mh = m1[i] / c1
            vh = v1[i] / c2
            p1[i] -= a * mh / (csqrt(vh) + e)
    return None
