# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled neighbor-mean kernels over CSR adjacency."""

import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


def neighbor_mean(real[:, ::1] h, const cnp.int64_t[::1] indptr,
                  const cnp.int64_t[::1] indices):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = h.shape[1]
    cdef Py_ssize_t i, k, c, j, start, stop
    cdef real deg
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, d), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            start = indptr[i]
            stop = indptr[i + 1]
            if stop == start:
                continue
            for k in range(start, stop):
                j = indices[k]
                for c in range(d):
                    out[i, c] += h[j, c]
            deg = <real>(stop - start)
            for c in range(d):
                out[i, c] = out[i, c] / deg
    return out_arr


def neighbor_mean_transpose(real[:, ::1] g, const cnp.int64_t[::1] indptr,
                            const cnp.int64_t[::1] indices):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = g.shape[1]
    cdef Py_ssize_t i, k, c, j, start, stop
    dtype = np.float32 if real is float else np.float64
    scaled_arr = np.zeros((n, d), dtype=dtype)
    out_arr = np.zeros((n, d), dtype=dtype)
    cdef real[:, ::1] scaled = scaled_arr
    cdef real[:, ::1] out = out_arr
    cdef real deg
    with nogil:
        for i in range(n):
            start = indptr[i]
            stop = indptr[i + 1]
            if stop == start:
                continue
            deg = <real>(stop - start)
            for c in range(d):
                scaled[i, c] = g[i, c] / deg
        # symmetric adjacency: the transpose gathers over the same lists
        for i in range(n):
            start = indptr[i]
            stop = indptr[i + 1]
            for k in range(start, stop):
                j = indices[k]
                for c in range(d):
                    out[i, c] += scaled[j, c]
    return out_arr
