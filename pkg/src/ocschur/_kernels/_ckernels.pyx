# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. See ``_fallback.py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused scalar:
    double
    double complex


def element_triplets(conn_dofs, ke):
    cdef cnp.int64_t[:, ::1] conn = np.ascontiguousarray(conn_dofs, dtype=np.int64)
    cdef double[:, ::1] k = np.ascontiguousarray(ke, dtype=np.float64)
    cdef Py_ssize_t n_el = conn.shape[0]
    cdef Py_ssize_t m = conn.shape[1]
    cdef Py_ssize_t nnz = n_el * m * m
    rows_arr = np.empty(nnz, dtype=np.int64)
    cols_arr = np.empty(nnz, dtype=np.int64)
    vals_arr = np.empty(nnz, dtype=np.float64)
    cdef cnp.int64_t[::1] rows = rows_arr
    cdef cnp.int64_t[::1] cols = cols_arr
    cdef double[::1] vals = vals_arr
    cdef Py_ssize_t e, a, b, p = 0
    for e in range(n_el):
        for a in range(m):
            for b in range(m):
                rows[p] = conn[e, a]
                cols[p] = conn[e, b]
                vals[p] = k[a, b]
                p += 1
    return rows_arr, cols_arr, vals_arr


cdef inline double _conj_d(double x) nogil:
    return x


cdef inline double complex _conj_z(double complex x) nogil:
    return x.real - 1j * x.imag


def _mgs(scalar[:, ::1] basis, Py_ssize_t k, scalar[::1] w, scalar[::1] h):
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t j, i
    cdef scalar c
    with nogil:
        for j in range(k):
            c = 0
            if scalar is double:
                for i in range(n):
                    c = c + basis[j, i] * w[i]
            else:
                for i in range(n):
                    c = c + _conj_z(basis[j, i]) * w[i]
            h[j] = c
            for i in range(n):
                w[i] = w[i] - c * basis[j, i]


def mgs_orthogonalize(basis, Py_ssize_t k, w, h):
    _mgs(basis, k, w, h)


def _scatter(scalar[::1] out, cnp.int64_t[::1] idx, scalar[::1] vals):
    cdef Py_ssize_t p
    with nogil:
        for p in range(idx.shape[0]):
            out[idx[p]] = out[idx[p]] + vals[p]


def scatter_add(out, idx, vals):
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    vals = np.ascontiguousarray(vals, dtype=out.dtype)
    _scatter(out, idx, vals)
