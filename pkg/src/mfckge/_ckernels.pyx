# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Same contract as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


def distances(const double[::1] query, const float[:, ::1] matrix, int p):
    cdef Py_ssize_t n = matrix.shape[0], d = matrix.shape[1], i, k
    cdef double acc, diff
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    if query.shape[0] != d:
        raise ValueError("query/matrix width mismatch")
    with nogil:
        for i in range(n):
            acc = 0.0
            if p == 1:
                for k in range(d):
                    acc += fabs(<double>matrix[i, k] - query[k])
                out[i] = acc
            else:
                for k in range(d):
                    diff = <double>matrix[i, k] - query[k]
                    acc += diff * diff
                out[i] = sqrt(acc)
    return out_arr


cdef inline double _score(const double[:, ::1] ent, const double[:, ::1] rel,
                          Py_ssize_t h, Py_ssize_t r, Py_ssize_t t, int p,
                          double[::1] buf) noexcept nogil:
    cdef Py_ssize_t k, d = ent.shape[1]
    cdef double acc = 0.0, x
    for k in range(d):
        x = ent[h, k] + rel[r, k] - ent[t, k]
        buf[k] = x
        if p == 1:
            acc += fabs(x)
        else:
            acc += x * x
    if p != 1:
        acc = sqrt(acc)
    return acc


cdef inline void _scatter(double[:, ::1] gent, double[:, ::1] grel,
                          Py_ssize_t h, Py_ssize_t r, Py_ssize_t t, int p,
                          const double[::1] buf, double norm, double sign) noexcept nogil:
    cdef Py_ssize_t k, d = gent.shape[1]
    cdef double g
    for k in range(d):
        if p == 1:
            g = (buf[k] > 0) - (buf[k] < 0)
        elif norm > 0:
            g = buf[k] / norm
        else:
            g = 0.0
        g *= sign
        gent[h, k] += g
        grel[r, k] += g
        gent[t, k] -= g


def transe_hinge(const double[:, ::1] ent, const double[:, ::1] rel,
                 const cnp.int64_t[:, ::1] pos, const cnp.int64_t[:, ::1] neg,
                 double margin, int p,
                 double[:, ::1] grad_ent, double[:, ::1] grad_rel):
    cdef Py_ssize_t b, n = pos.shape[0], d = ent.shape[1]
    cdef double loss = 0.0, fp, fn, term
    pbuf_arr = np.empty(d, dtype=np.float64)
    nbuf_arr = np.empty(d, dtype=np.float64)
    cdef double[::1] pbuf = pbuf_arr
    cdef double[::1] nbuf = nbuf_arr
    with nogil:
        for b in range(n):
            fp = _score(ent, rel, pos[b, 0], pos[b, 1], pos[b, 2], p, pbuf)
            fn = _score(ent, rel, neg[b, 0], neg[b, 1], neg[b, 2], p, nbuf)
            term = fp - fn + margin
            if term > 0:
                loss += term
                _scatter(grad_ent, grad_rel, pos[b, 0], pos[b, 1], pos[b, 2], p, pbuf, fp, 1.0)
                _scatter(grad_ent, grad_rel, neg[b, 0], neg[b, 1], neg[b, 2], p, nbuf, fn, -1.0)
    return loss
