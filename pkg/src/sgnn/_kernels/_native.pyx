# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Native kernel backend.

Mirrors ``_reference.py`` operation-for-operation: identical loop structure
and accumulation order, so results are bit-identical to the pure-Python
backend (the parity tests enforce this).
"""

from libc.math cimport log, sqrt, exp
from libc.stdint cimport uint64_t

cdef double _INV_2_53 = 1.0 / 9007199254740992.0


def mm(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n, Py_ssize_t k, Py_ssize_t m):
    cdef Py_ssize_t i, j, t, ik, im
    cdef double s
    with nogil:
        for i in range(n):
            ik = i * k
            im = i * m
            for j in range(m):
                s = 0.0
                for t in range(k):
                    s += a[ik + t] * b[t * m + j]
                out[im + j] = s


def transpose(double[::1] a, double[::1] out, Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j, im
    for i in range(n):
        im = i * m
        for j in range(m):
            out[j * n + i] = a[im + j]


def ew_add(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] + b[i]


def ew_sub(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] - b[i]


def ew_mul(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] * b[i]


def ew_div(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] / b[i]


def scale(double[::1] a, double s, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] * s


def add_scalar(double[::1] a, double s, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] + s


def lin2(double[::1] a, double[::1] b, double ca, double cb, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = ca * a[i] + cb * b[i]


def add_rowvec(double[::1] a, double[::1] v, double[::1] out, Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j, im
    for i in range(n):
        im = i * m
        for j in range(m):
            out[im + j] = a[im + j] + v[j]


def relu(double[::1] a, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double x
    for i in range(n):
        x = a[i]
        out[i] = x if x > 0.0 else 0.0


def relu_grad(double[::1] pre, double[::1] g, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = g[i] if pre[i] > 0.0 else 0.0


def logistic(double[::1] a, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double x, e
    for i in range(n):
        x = a[i]
        if x >= 0.0:
            out[i] = 1.0 / (1.0 + exp(-x))
        else:
            e = exp(x)
            out[i] = e / (1.0 + e)


def sqrt_ew(double[::1] a, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = sqrt(a[i])


def abs_ew(double[::1] a, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double x
    for i in range(n):
        x = a[i]
        out[i] = -x if x < 0.0 else x


def clip(double[::1] a, double lo, double hi, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double x
    for i in range(n):
        x = a[i]
        if x < lo:
            x = lo
        elif x > hi:
            x = hi
        out[i] = x


def row_sum(double[::1] a, double[::1] out, Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j, im
    cdef double s
    for i in range(n):
        im = i * m
        s = 0.0
        for j in range(m):
            s += a[im + j]
        out[i] = s


def col_sum(double[::1] a, double[::1] out, Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j
    cdef double s
    for j in range(m):
        s = 0.0
        for i in range(n):
            s += a[i * m + j]
        out[j] = s


def zscore_rows(double[::1] a, double[::1] out, Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j, im
    cdef double mn, mx, s, x, mean, ss, d, std
    for i in range(n):
        im = i * m
        mn = a[im]
        mx = a[im]
        s = 0.0
        for j in range(m):
            x = a[im + j]
            s += x
            if x < mn:
                mn = x
            if x > mx:
                mx = x
        if mn == mx:
            for j in range(m):
                out[im + j] = 0.0
            continue
        mean = s / m
        ss = 0.0
        for j in range(m):
            d = a[im + j] - mean
            ss += d * d
        std = sqrt(ss / m)
        for j in range(m):
            out[im + j] = (a[im + j] - mean) / std


# ---------------------------------------------------------------------------
# xoshiro256++ RNG core
# ---------------------------------------------------------------------------

cdef inline uint64_t _rotl(uint64_t x, int k) nogil:
    return (x << k) | (x >> (64 - k))


cdef inline uint64_t _next(uint64_t[::1] state) nogil:
    cdef uint64_t s0 = state[0]
    cdef uint64_t s1 = state[1]
    cdef uint64_t s2 = state[2]
    cdef uint64_t s3 = state[3]
    cdef uint64_t t = s0 + s3
    cdef uint64_t result = _rotl(t, 23) + s0
    t = s1 << 17
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return result


def next_u64(uint64_t[::1] state):
    return _next(state)


def fill_uniform(uint64_t[::1] state, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = (_next(state) >> 11) * _INV_2_53


def fill_normal(uint64_t[::1] state, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i = 0
    cdef double v1, v2, s, f
    with nogil:
        while i < n:
            while True:
                v1 = 2.0 * ((_next(state) >> 11) * _INV_2_53) - 1.0
                v2 = 2.0 * ((_next(state) >> 11) * _INV_2_53) - 1.0
                s = v1 * v1 + v2 * v2
                if 0.0 < s < 1.0:
                    break
            f = sqrt(-2.0 * log(s) / s)
            out[i] = v1 * f
            i += 1
            if i < n:
                out[i] = v2 * f
                i += 1
