# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

Must stay bit-identical to kinemic.kernels._reference: same accumulation
order for window sums, same expression tree for bone rescaling.
"""

from libc.math cimport sqrt

import numpy as np

cimport numpy as cnp

cnp.import_array()


def window_scores(object weights, Py_ssize_t m):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.ascontiguousarray(
        weights, dtype=np.float64
    )
    cdef Py_ssize_t n = w.shape[0]
    if m < 1 or m > n:
        raise ValueError(f"window length {m} not in [1, {n}]")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n - m + 1, dtype=np.float64)
    cdef double[::1] wv = w
    cdef double[::1] ov = out
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(n - m + 1):
        s = wv[i]
        for k in range(i + 1, i + m):
            s = s + wv[k]
        ov[i] = s
    return out


def best_window(object weights, Py_ssize_t m):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.ascontiguousarray(
        weights, dtype=np.float64
    )
    cdef Py_ssize_t n = w.shape[0]
    if m < 1 or m > n:
        raise ValueError(f"window length {m} not in [1, {n}]")
    cdef double[::1] wv = w
    cdef Py_ssize_t i, k, best_i = 0
    cdef double s, best = -1e308
    for i in range(n - m + 1):
        s = wv[i]
        for k in range(i + 1, i + m):
            s = s + wv[k]
        if s > best:
            best = s
            best_i = i
    return best_i, best


def rescale_bones(
    object positions,
    object parents,
    object order,
    object ref_lengths,
    object rest_dirs,
    double eps=1e-12,
):
    cdef cnp.ndarray[cnp.float64_t, ndim=3] pos = np.ascontiguousarray(
        positions, dtype=np.float64
    )
    cdef cnp.ndarray[cnp.int64_t, ndim=1] par = np.ascontiguousarray(
        parents, dtype=np.int64
    )
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ordr = np.ascontiguousarray(
        order, dtype=np.int64
    )
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ref = np.ascontiguousarray(
        ref_lengths, dtype=np.float64
    )
    cdef cnp.ndarray[cnp.float64_t, ndim=2] rest = np.ascontiguousarray(
        rest_dirs, dtype=np.float64
    )
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = pos.copy()
    cdef double[:, :, ::1] pv = pos
    cdef double[:, :, ::1] ov = out
    cdef Py_ssize_t n = pos.shape[0]
    cdef Py_ssize_t t, idx, j, p
    cdef double dx, dy, dz, nrm, ux, uy, uz, r
    for idx in range(ordr.shape[0]):
        j = ordr[idx]
        p = par[j]
        r = ref[j]
        for t in range(n):
            dx = pv[t, j, 0] - pv[t, p, 0]
            dy = pv[t, j, 1] - pv[t, p, 1]
            dz = pv[t, j, 2] - pv[t, p, 2]
            nrm = sqrt((dx * dx + dy * dy) + dz * dz)
            if nrm < eps:
                ux = rest[j, 0]
                uy = rest[j, 1]
                uz = rest[j, 2]
            else:
                ux = dx / nrm
                uy = dy / nrm
                uz = dz / nrm
            ov[t, j, 0] = ov[t, p, 0] + r * ux
            ov[t, j, 1] = ov[t, p, 1] + r * uy
            ov[t, j, 2] = ov[t, p, 2] + r * uz
    return out
