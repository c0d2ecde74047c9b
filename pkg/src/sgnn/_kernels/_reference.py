"""Pure-Python kernel backend.

Every function here has a native twin in ``_native.pyx``. The two backends
must produce bit-identical results, so loop structure and accumulation order
are part of the contract: the native code mirrors this file exactly and the
parity test suite asserts equality. Buffers are flat ``array('d')`` values in
row-major order; RNG state is a 4-word ``array('Q')``.
"""

from math import log, sqrt, exp

_M64 = 0xFFFFFFFFFFFFFFFF
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


# ---------------------------------------------------------------------------
# dense linear algebra
# ---------------------------------------------------------------------------

def mm(a, b, out, n, k, m):
    """out[n x m] = a[n x k] @ b[k x m], scalar accumulation in k-order."""
    for i in range(n):
        ik = i * k
        im = i * m
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[ik + t] * b[t * m + j]
            out[im + j] = s


def transpose(a, out, n, m):
    for i in range(n):
        im = i * m
        for j in range(m):
            out[j * n + i] = a[im + j]


def ew_add(a, b, out, n):
    for i in range(n):
        out[i] = a[i] + b[i]


def ew_sub(a, b, out, n):
    for i in range(n):
        out[i] = a[i] - b[i]


def ew_mul(a, b, out, n):
    for i in range(n):
        out[i] = a[i] * b[i]


def ew_div(a, b, out, n):
    for i in range(n):
        out[i] = a[i] / b[i]


def scale(a, s, out, n):
    for i in range(n):
        out[i] = a[i] * s


def add_scalar(a, s, out, n):
    for i in range(n):
        out[i] = a[i] + s


def lin2(a, b, ca, cb, out, n):
    """out = ca*a + cb*b."""
    for i in range(n):
        out[i] = ca * a[i] + cb * b[i]


def add_rowvec(a, v, out, n, m):
    """Add a length-m row vector to every row of a[n x m]."""
    for i in range(n):
        im = i * m
        for j in range(m):
            out[im + j] = a[im + j] + v[j]


def relu(a, out, n):
    for i in range(n):
        x = a[i]
        out[i] = x if x > 0.0 else 0.0


def relu_grad(pre, g, out, n):
    """out = g where pre > 0 else 0 (subgradient at the kink is 0)."""
    for i in range(n):
        out[i] = g[i] if pre[i] > 0.0 else 0.0


def logistic(a, out, n):
    for i in range(n):
        x = a[i]
        if x >= 0.0:
            out[i] = 1.0 / (1.0 + exp(-x))
        else:
            e = exp(x)
            out[i] = e / (1.0 + e)


def sqrt_ew(a, out, n):
    for i in range(n):
        out[i] = sqrt(a[i])


def abs_ew(a, out, n):
    for i in range(n):
        x = a[i]
        out[i] = -x if x < 0.0 else x


def clip(a, lo, hi, out, n):
    for i in range(n):
        x = a[i]
        if x < lo:
            x = lo
        elif x > hi:
            x = hi
        out[i] = x


def row_sum(a, out, n, m):
    for i in range(n):
        im = i * m
        s = 0.0
        for j in range(m):
            s += a[im + j]
        out[i] = s


def col_sum(a, out, n, m):
    for j in range(m):
        s = 0.0
        for i in range(n):
            s += a[i * m + j]
        out[j] = s


def zscore_rows(a, out, n, m):
    """Per-row mean 0 / population-std 1; constant rows map to zeros.

    Constant rows are detected exactly (max == min) so the degenerate case
    does not depend on rounding in the mean.
    """
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

def next_u64(state):
    """Advance xoshiro256++ state in place and return the next 64-bit word."""
    s0 = state[0]
    s1 = state[1]
    s2 = state[2]
    s3 = state[3]
    t = (s0 + s3) & _M64
    result = (((t << 23) | (t >> 41)) + s0) & _M64
    t = (s1 << 17) & _M64
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = ((s3 << 45) | (s3 >> 19)) & _M64
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return result


def fill_uniform(state, out, n):
    """n doubles in [0, 1) from the top 53 bits of each draw."""
    for i in range(n):
        out[i] = (next_u64(state) >> 11) * _INV_2_53


def fill_normal(state, out, n):
    """n standard normals via the Marsaglia polar method.

    Pairs are generated together; for odd n the second value of the final
    pair is discarded, so the state advance is a function of (state, n) only.
    """
    i = 0
    while i < n:
        while True:
            v1 = 2.0 * ((next_u64(state) >> 11) * _INV_2_53) - 1.0
            v2 = 2.0 * ((next_u64(state) >> 11) * _INV_2_53) - 1.0
            s = v1 * v1 + v2 * v2
            if 0.0 < s < 1.0:
                break
        f = sqrt(-2.0 * log(s) / s)
        out[i] = v1 * f
        i += 1
        if i < n:
            out[i] = v2 * f
            i += 1
