# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled squared Euclidean distance transform; mirrors ``_edt_py`` exactly."""
import numpy as np

cdef double BIG = 1e20


cdef void _envelope_1d(double* f, Py_ssize_t n, Py_ssize_t stride,
                       double* d, Py_ssize_t* v, double* z) noexcept nogil:
    cdef Py_ssize_t q, p, k = 0
    cdef double s, fq
    v[0] = 0
    z[0] = -BIG
    z[1] = BIG
    for q in range(1, n):
        fq = f[q * stride] + q * q
        while True:
            p = v[k]
            s = (fq - (f[p * stride] + p * p)) / (2.0 * q - 2.0 * p)
            if s <= z[k]:
                k -= 1
                continue
            break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = BIG
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        p = v[k]
        d[q] = (q - p) * (q - p) + f[p * stride]


def edt_sq(target):
    """Squared distance from every pixel to the nearest pixel where ``target`` is set."""
    t = np.ascontiguousarray(target, dtype=np.uint8)
    cdef Py_ssize_t h = t.shape[0], w = t.shape[1], i, j
    cdef Py_ssize_t n = max(h, w)
    out_arr = np.where(t != 0, 0.0, BIG)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] d = np.empty(n, dtype=np.float64)
    cdef double[::1] z = np.empty(n + 1, dtype=np.float64)
    cdef Py_ssize_t[::1] v = np.empty(n, dtype=np.intp)
    with nogil:
        for i in range(h):
            _envelope_1d(&out[i, 0], w, 1, &d[0], &v[0], &z[0])
            for j in range(w):
                out[i, j] = d[j]
        for j in range(w):
            _envelope_1d(&out[0, j], h, w, &d[0], &v[0], &z[0])
            for i in range(h):
                out[i, j] = d[i]
    return out_arr
