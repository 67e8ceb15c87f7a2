# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled jet kernels: truncated Taylor products in tight C loops."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def jet_mul(const double[:, ::1] a, const double[:, ::1] b,
            const Py_ssize_t[::1] pi, const Py_ssize_t[::1] pj, const Py_ssize_t[::1] pk):
    cdef Py_ssize_t n = a.shape[0], nc = a.shape[1], npair = pi.shape[0]
    cdef Py_ssize_t r, q
    out_arr = np.zeros((n, nc))
    cdef double[:, ::1] out = out_arr
    with nogil:
        for r in range(n):
            for q in range(npair):
                out[r, pk[q]] += a[r, pi[q]] * b[r, pj[q]]
    return out_arr


def jet_matmul(a, b, const Py_ssize_t[::1] pi, const Py_ssize_t[::1] pj, const Py_ssize_t[::1] pk):
    """Batched jet matrix product; a is (n, rows, inner, nc), b is (n, inner, cols, nc).

    The coefficient axis is moved in front of the matrix axes so that the
    innermost loop runs over a contiguous row of b.
    """
    cdef const double[:, :, :, ::1] A = np.ascontiguousarray(np.moveaxis(a, -1, 1), dtype=np.float64)
    cdef const double[:, :, :, ::1] B = np.ascontiguousarray(np.moveaxis(b, -1, 1), dtype=np.float64)
    cdef Py_ssize_t n = A.shape[0], rows = A.shape[2], inner = A.shape[3]
    cdef Py_ssize_t cols = B.shape[3], nc = A.shape[1], npair = pi.shape[0]
    cdef Py_ssize_t m, i, j, k, q, ca, cb, cc
    cdef double av
    out_arr = np.zeros((n, nc, rows, cols))
    cdef double[:, :, :, ::1] out = out_arr
    with nogil:
        for m in range(n):
            for q in range(npair):
                ca = pi[q]
                cb = pj[q]
                cc = pk[q]
                for i in range(rows):
                    for k in range(inner):
                        av = A[m, ca, i, k]
                        if av == 0.0:
                            continue
                        for j in range(cols):
                            out[m, cc, i, j] += av * B[m, cb, k, j]
    return np.moveaxis(out_arr, 1, -1)
