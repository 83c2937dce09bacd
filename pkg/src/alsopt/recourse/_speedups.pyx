# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled recourse allocation kernel (see _fallback.py for the reference)."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def batch_values_grads(D, C, r, p, order, want_grads):
    D = np.ascontiguousarray(D, dtype=np.float64)
    squeeze = D.ndim == 2
    if squeeze:
        D = D[None]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] Da = D
    cdef cnp.ndarray[cnp.float64_t, ndim=1] Ca = np.ascontiguousarray(C, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ra = np.ascontiguousarray(r, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pa = np.ascontiguousarray(p, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] orda = np.ascontiguousarray(order, dtype=np.int64)

    cdef Py_ssize_t N = Da.shape[0], I = Da.shape[1], J = Da.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] values = np.zeros(N, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] grads
    cdef cnp.float64_t[:, :, ::1] gv
    cdef bint wg = bool(want_grads)
    if wg:
        grads = np.empty((N, I, J), dtype=np.float64)
        gv = grads
    else:
        grads = np.empty((1, 1, 1), dtype=np.float64)
        gv = grads

    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.empty(I, dtype=np.float64)
    cdef Py_ssize_t n, k, i, j
    for k in range(I):
        w[k] = ra[orda[k]] + pa[orda[k]]

    cdef double lin, alloc, cap, d, u, z, y
    for n in range(N):
        lin = 0.0
        alloc = 0.0
        for j in range(J):
            cap = Ca[j]
            y = 0.0
            for k in range(I):
                i = orda[k]
                d = Da[n, i, j]
                lin += pa[i] * d
                u = d if d > 0.0 else 0.0
                z = u if u < cap else cap
                cap -= z
                alloc += w[k] * z
                if cap <= 0.0 and y == 0.0:
                    y = w[k]
            if wg:
                for k in range(I):
                    i = orda[k]
                    d = Da[n, i, j]
                    if d > 0.0 and w[k] > y:
                        gv[n, i, j] = pa[i] - (w[k] - y)
                    else:
                        gv[n, i, j] = pa[i]
        values[n] = lin - alloc
    if not wg:
        return (values[0] if squeeze else values), None
    if squeeze:
        return values[0], grads[0]
    return values, grads
