# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled dense kernels.

Bit-identical twin of `_kernels_py` (see that module for the contract).
Reduction order is the same fixed order, transcendentals come from the
same libm, and the build disables FMA contraction, so results match the
pure-Python fallback exactly. Inner loops release the GIL so client
training threads can overlap.
"""

from cpython cimport array
from libc.math cimport exp, sqrt, tanh

import array as _pyarray

cdef array.array _D = _pyarray.array('d', [])


def matmul(double[::1] a, int ar, int ac, double[::1] b, int br, int bc):
    cdef array.array outa = array.clone(_D, ar * bc, zero=True)
    cdef double[::1] out = outa
    cdef Py_ssize_t i, j, k
    cdef double acc
    with nogil:
        for i in range(ar):
            for j in range(bc):
                acc = 0.0
                for k in range(ac):
                    acc = acc + a[i * ac + k] * b[k * bc + j]
                out[i * bc + j] = acc
    return outa


def transpose(double[::1] a, int ar, int ac):
    cdef array.array outa = array.clone(_D, ar * ac, zero=False)
    cdef double[::1] out = outa
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(ar):
            for j in range(ac):
                out[j * ar + i] = a[i * ac + j]
    return outa


def add(double[::1] a, double[::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    cdef array.array outa = array.clone(_D, n, zero=False)
    cdef double[::1] out = outa
    with nogil:
        for i in range(n):
            out[i] = a[i] + b[i]
    return outa


def sub(double[::1] a, double[::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    cdef array.array outa = array.clone(_D, n, zero=False)
    cdef double[::1] out = outa
    with nogil:
        for i in range(n):
            out[i] = a[i] - b[i]
    return outa


def scale(double[::1] a, double c):
    cdef Py_ssize_t n = a.shape[0], i
    cdef array.array outa = array.clone(_D, n, zero=False)
    cdef double[::1] out = outa
    with nogil:
        for i in range(n):
            out[i] = a[i] * c
    return outa


def hadamard(double[::1] a, double[::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    cdef array.array outa = array.clone(_D, n, zero=False)
    cdef double[::1] out = outa
    with nogil:
        for i in range(n):
            out[i] = a[i] * b[i]
    return outa


def scale_columns(double[::1] a, int ar, int ac, double[::1] s):
    cdef array.array outa = array.clone(_D, ar * ac, zero=False)
    cdef double[::1] out = outa
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(ar):
            for j in range(ac):
                out[i * ac + j] = a[i * ac + j] * s[j]
    return outa


def column_norms(double[::1] a, int ar, int ac):
    cdef array.array outa = array.clone(_D, ac, zero=True)
    cdef double[::1] out = outa
    cdef Py_ssize_t i, j
    cdef double v
    with nogil:
        for i in range(ar):
            for j in range(ac):
                v = a[i * ac + j]
                out[j] = out[j] + v * v
        for j in range(ac):
            out[j] = sqrt(out[j])
    return outa


def column_dots(double[::1] a, double[::1] b, int ar, int ac):
    cdef array.array outa = array.clone(_D, ac, zero=True)
    cdef double[::1] out = outa
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(ar):
            for j in range(ac):
                out[j] = out[j] + a[i * ac + j] * b[i * ac + j]
    return outa


def col_sums(double[::1] a, int ar, int ac):
    cdef array.array outa = array.clone(_D, ac, zero=True)
    cdef double[::1] out = outa
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(ar):
            for j in range(ac):
                out[j] = out[j] + a[i * ac + j]
    return outa


def frobenius_sq(double[::1] a):
    cdef Py_ssize_t n = a.shape[0], i
    cdef double s = 0.0
    with nogil:
        for i in range(n):
            s += a[i] * a[i]
    return s


def dot(double[::1] a, double[::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    cdef double s = 0.0
    with nogil:
        for i in range(n):
            s += a[i] * b[i]
    return s


def tanh_map(double[::1] a):
    cdef Py_ssize_t n = a.shape[0], i
    cdef array.array outa = array.clone(_D, n, zero=False)
    cdef double[::1] out = outa
    with nogil:
        for i in range(n):
            out[i] = tanh(a[i])
    return outa


def tanh_backward(double[::1] h, double[::1] g):
    cdef Py_ssize_t n = h.shape[0], i
    cdef array.array outa = array.clone(_D, n, zero=False)
    cdef double[::1] out = outa
    with nogil:
        for i in range(n):
            out[i] = g[i] * (1.0 - h[i] * h[i])
    return outa


def add_row_vector(double[::1] a, int ar, int ac, double[::1] v):
    cdef array.array outa = array.clone(_D, ar * ac, zero=False)
    cdef double[::1] out = outa
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(ar):
            for j in range(ac):
                out[i * ac + j] = a[i * ac + j] + v[j]
    return outa


def softmax_rows(double[::1] z, int zr, int zc):
    cdef array.array outa = array.clone(_D, zr * zc, zero=False)
    cdef double[::1] out = outa
    cdef Py_ssize_t i, j
    cdef double m, s, e, v
    with nogil:
        for i in range(zr):
            m = z[i * zc]
            for j in range(1, zc):
                v = z[i * zc + j]
                if v > m:
                    m = v
            s = 0.0
            for j in range(zc):
                e = exp(z[i * zc + j] - m)
                out[i * zc + j] = e
                s += e
            for j in range(zc):
                out[i * zc + j] /= s
    return outa
