# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled row kernels.  Mirrors ``_kernels_py`` function for function."""
import numpy as np
cimport cython
from cython cimport floating
from libc.math cimport exp, expf, log, sqrt

cdef extern from "_vecmath.h":
    pass


cdef inline floating _exp(floating v) noexcept nogil:
    # single precision uses expf so float32 rows avoid the double-precision libm path
    if floating is float:
        return expf(v)
    else:
        return exp(v)


def softmax_forward(floating[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], i, j
    out_arr = np.empty((n, c), dtype=np.asarray(x).dtype)
    cdef floating[:, ::1] out = out_arr
    cdef floating m
    cdef double s
    with nogil:
        for i in range(n):
            m = x[i, 0]
            for j in range(1, c):
                if x[i, j] > m:
                    m = x[i, j]
            # exp pass kept free of the reduction so it vectorizes
            for j in range(c):
                out[i, j] = _exp(x[i, j] - m)
            s = 0.0
            for j in range(c):
                s += out[i, j]
            for j in range(c):
                out[i, j] = <floating>(out[i, j] / s)
    return out_arr


def softmax_backward(floating[:, ::1] y, floating[:, ::1] gy):
    cdef Py_ssize_t n = y.shape[0], c = y.shape[1], i, j
    out_arr = np.empty((n, c), dtype=np.asarray(y).dtype)
    cdef floating[:, ::1] out = out_arr
    cdef double dot
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(c):
                dot += gy[i, j] * y[i, j]
            for j in range(c):
                out[i, j] = <floating>(y[i, j] * (gy[i, j] - dot))
    return out_arr


def log_softmax_forward(floating[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], i, j
    out_arr = np.empty((n, c), dtype=np.asarray(x).dtype)
    cdef floating[:, ::1] out = out_arr
    cdef floating m
    cdef double s, lse
    with nogil:
        for i in range(n):
            m = x[i, 0]
            for j in range(1, c):
                if x[i, j] > m:
                    m = x[i, j]
            for j in range(c):
                out[i, j] = _exp(x[i, j] - m)
            s = 0.0
            for j in range(c):
                s += out[i, j]
            lse = log(s)
            for j in range(c):
                out[i, j] = <floating>(x[i, j] - m - lse)
    return out_arr


def log_softmax_backward(floating[:, ::1] y, floating[:, ::1] gy):
    cdef Py_ssize_t n = y.shape[0], c = y.shape[1], i, j
    out_arr = np.empty((n, c), dtype=np.asarray(y).dtype)
    cdef floating[:, ::1] out = out_arr
    cdef double s
    with nogil:
        for i in range(n):
            s = 0.0
            for j in range(c):
                s += gy[i, j]
            for j in range(c):
                out[i, j] = <floating>(gy[i, j] - _exp(y[i, j]) * s)
    return out_arr


def rms_norm_forward(floating[:, ::1] x, floating[::1] gain, double eps):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], i, j
    dtype = np.asarray(x).dtype
    out_arr = np.empty((n, h), dtype=dtype)
    inv_arr = np.empty(n, dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    cdef floating[::1] inv = inv_arr
    cdef double ms, r
    with nogil:
        for i in range(n):
            ms = 0.0
            for j in range(h):
                ms += x[i, j] * x[i, j]
            r = 1.0 / sqrt(ms / h + eps)
            inv[i] = <floating>r
            for j in range(h):
                out[i, j] = <floating>(x[i, j] * inv[i] * gain[j])
    return out_arr, inv_arr


def rms_norm_backward(floating[:, ::1] x, floating[::1] gain, floating[::1] inv, floating[:, ::1] gy):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], i, j
    dtype = np.asarray(x).dtype
    gx_arr = np.empty((n, h), dtype=dtype)
    gg = np.zeros(h, dtype=np.float64)
    cdef floating[:, ::1] gx = gx_arr
    cdef double[::1] ggain = gg
    cdef double proj, xhat, r
    with nogil:
        for i in range(n):
            r = inv[i]
            proj = 0.0
            for j in range(h):
                xhat = x[i, j] * r
                proj += gy[i, j] * gain[j] * xhat
                ggain[j] += gy[i, j] * xhat
            proj = proj / h
            for j in range(h):
                gx[i, j] = <floating>(r * (gy[i, j] * gain[j] - x[i, j] * r * proj))
    return gx_arr, gg.astype(dtype)


cdef inline double _sigmoid(double v) nogil:
    cdef double e
    if v >= 0:
        return 1.0 / (1.0 + exp(-v))
    e = exp(v)
    return e / (1.0 + e)


def silu_forward(floating[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], i, j
    out_arr = np.empty((n, c), dtype=np.asarray(x).dtype)
    cdef floating[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(c):
                out[i, j] = <floating>(x[i, j] * _sigmoid(x[i, j]))
    return out_arr


def silu_backward(floating[:, ::1] x, floating[:, ::1] gy):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], i, j
    out_arr = np.empty((n, c), dtype=np.asarray(x).dtype)
    cdef floating[:, ::1] out = out_arr
    cdef double s
    with nogil:
        for i in range(n):
            for j in range(c):
                s = _sigmoid(x[i, j])
                out[i, j] = <floating>(gy[i, j] * s * (1.0 + x[i, j] * (1.0 - s)))
    return out_arr


def rope_forward(floating[:, :, ::1] x, floating[:, ::1] cos, floating[:, ::1] sin):
    cdef Py_ssize_t n = x.shape[0], t = x.shape[1], d = x.shape[2], half = d // 2
    cdef Py_ssize_t i, p, j
    out_arr = np.empty((n, t, d), dtype=np.asarray(x).dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef floating a, b
    with nogil:
        for i in range(n):
            for p in range(t):
                for j in range(half):
                    a = x[i, p, j]
                    b = x[i, p, j + half]
                    out[i, p, j] = a * cos[p, j] - b * sin[p, j]
                    out[i, p, j + half] = a * sin[p, j] + b * cos[p, j]
    return out_arr
