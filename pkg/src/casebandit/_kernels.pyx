# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the per-step kernels (see _kernels_py for semantics)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs

cnp.import_array()


def sherman_morrison(const double[:, ::1] inv, const double[::1] z):
    cdef Py_ssize_t d = inv.shape[0]
    cdef Py_ssize_t i, j
    cdef double denom = 1.0, acc
    out_arr = np.empty((d, d), dtype=np.float64)
    u_arr = np.empty(d, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] u = u_arr
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += inv[i, j] * z[j]
        u[i] = acc
    for i in range(d):
        denom += z[i] * u[i]
    for i in range(d):
        for j in range(d):
            out[i, j] = inv[i, j] - u[i] * u[j] / denom
    for i in range(d):
        for j in range(i + 1, d):
            acc = 0.5 * (out[i, j] + out[j, i])
            out[i, j] = acc
            out[j, i] = acc
    return out_arr


def quad_forms(const double[:, ::1] inv, const double[:, ::1] Z):
    cdef Py_ssize_t n = Z.shape[0], d = Z.shape[1]
    cdef Py_ssize_t r, i, j
    cdef double acc, row
    res_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] res = res_arr
    for r in range(n):
        acc = 0.0
        for i in range(d):
            row = 0.0
            for j in range(d):
                row += inv[i, j] * Z[r, j]
            acc += Z[r, i] * row
        res[r] = acc
    return res_arr


def topk_inner(const double[:, ::1] E, const double[::1] q, Py_ssize_t k):
    cdef Py_ssize_t n = E.shape[0], d = E.shape[1]
    cdef Py_ssize_t i, j, filled = 0, pos
    cdef double s
    if n == 0 or k <= 0:
        return np.empty(0, dtype=np.int64)
    if k > n:
        k = n
    best_s_arr = np.empty(k, dtype=np.float64)
    best_i_arr = np.empty(k, dtype=np.int64)
    cdef double[::1] best_s = best_s_arr
    cdef long long[::1] best_i = best_i_arr
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += E[i, j] * q[j]
        # rows arrive in increasing index, so strict > keeps earlier ties ahead
        if filled == k and s <= best_s[k - 1]:
            continue
        pos = filled if filled < k else k - 1
        while pos > 0 and s > best_s[pos - 1]:
            if pos < k:
                best_s[pos] = best_s[pos - 1]
                best_i[pos] = best_i[pos - 1]
            pos -= 1
        best_s[pos] = s
        best_i[pos] = i
        if filled < k:
            filled += 1
    return best_i_arr


def logistic_objective(const double[::1] theta, const double[:, ::1] Z,
                       const double[::1] r, double lam):
    cdef Py_ssize_t n = Z.shape[0], d = Z.shape[1]
    cdef Py_ssize_t i, j
    cdef double x, p, e, loss = 0.0, resid
    grad_arr = np.empty(d, dtype=np.float64)
    cdef double[::1] grad = grad_arr
    for j in range(d):
        grad[j] = lam * theta[j]
        loss += 0.5 * lam * theta[j] * theta[j]
    for i in range(n):
        x = 0.0
        for j in range(d):
            x += Z[i, j] * theta[j]
        if x >= 0:
            e = exp(-x)
            p = 1.0 / (1.0 + e)
            loss += x + log1p(e) - r[i] * x
        else:
            e = exp(x)
            p = e / (1.0 + e)
            loss += log1p(e) - r[i] * x
        resid = p - r[i]
        for j in range(d):
            grad[j] += resid * Z[i, j]
    return loss, grad_arr
