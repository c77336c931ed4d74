# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Pure-Python twins live in ``_kernels_py``."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def first_ultrametric_violation(const double[:, ::1] d, double tol):
    cdef Py_ssize_t n = d.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double dij, m
    for i in range(n):
        for j in range(i + 1, n):
            dij = d[i, j]
            for k in range(n):
                m = d[i, k] if d[i, k] > d[k, j] else d[k, j]
                if dij > m + tol:
                    return (i, j, k)
    return None


def max_ultrametric_excess(const double[:, ::1] d):
    cdef Py_ssize_t n = d.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double dij, m, worst = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            dij = d[i, j]
            for k in range(n):
                m = d[i, k] if d[i, k] > d[k, j] else d[k, j]
                if dij - m > worst:
                    worst = dij - m
    return worst


def record_merges(const cnp.int64_t[::1] old_block,
                  const cnp.int64_t[::1] new_block,
                  double[:, ::1] tau,
                  double u):
    cdef Py_ssize_t n = old_block.shape[0]
    cdef Py_ssize_t i, j
    cdef Py_ssize_t count = 0
    for i in range(n):
        for j in range(i + 1, n):
            if old_block[i] != old_block[j] and new_block[i] == new_block[j]:
                tau[i, j] = u
                tau[j, i] = u
                count += 1
    return count


def shared_depth(const cnp.int64_t[:, ::1] paths):
    cdef Py_ssize_t n = paths.shape[0]
    cdef Py_ssize_t m = paths.shape[1]
    cdef Py_ssize_t i, j, l
    out = np.empty((n, n), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] o = out
    for i in range(n):
        o[i, i] = m
        for j in range(i + 1, n):
            l = 0
            while l < m and paths[i, l] == paths[j, l]:
                l += 1
            o[i, j] = l
            o[j, i] = l
    return out
