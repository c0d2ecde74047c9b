"""Dense float64 matrices and a deterministic, platform-independent RNG.

This is the numeric substrate for the whole package. Matrices are immutable
after construction (builders mutate private buffers before publishing them),
so they can be shared freely across threads. All arithmetic dispatches to the
active kernel backend (compiled or pure Python, bit-identical either way).

The RNG is xoshiro256++ seeded through the splitmix64 finalizer, with normal
deviates from the Marsaglia polar method. The integer stream is exactly
reproducible on every platform; the float transforms use only IEEE-exact
operations plus libm ``log``, so draws match across platforms up to the last
ulp of ``log``.
"""

from __future__ import annotations

import hashlib
import math
import sys
from array import array
from typing import Iterable, Sequence

from . import _kernels as K
from .errors import ShapeError

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _buf(n: int) -> array:
    """Zero-filled float64 buffer of length n."""
    return array("d", bytes(8 * n))


def f64_to_le_bytes(buf: array) -> bytes:
    """Serialize a float64 buffer as little-endian regardless of platform."""
    if sys.byteorder == "big":
        buf = array("d", buf)
        buf.byteswap()
    return buf.tobytes()


def f64_from_le_bytes(blob: bytes) -> array:
    """Deserialize little-endian float64 bytes into a buffer."""
    buf = array("d")
    buf.frombytes(blob)
    if sys.byteorder == "big":
        buf.byteswap()
    return buf


class Matrix:
    """Immutable row-major float64 matrix."""

    __slots__ = ("rows", "cols", "_data")

    def __init__(self, rows: int, cols: int, data: Iterable[float]):
        if rows < 0 or cols < 0:
            raise ShapeError(f"negative dimensions ({rows}, {cols})")
        buf = array("d", data)
        if len(buf) != rows * cols:
            raise ShapeError(
                f"data length {len(buf)} does not match shape ({rows}, {cols})"
            )
        for x in buf:
            if not math.isfinite(x):
                raise ValueError("matrix entries must be finite")
        self.rows = rows
        self.cols = cols
        self._data = buf

    # -- construction -------------------------------------------------

    @classmethod
    def _wrap(cls, rows: int, cols: int, buf: array) -> "Matrix":
        """Adopt a buffer without copying or validation (internal)."""
        m = object.__new__(cls)
        m.rows = rows
        m.cols = cols
        m._data = buf
        return m

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls._wrap(rows, cols, _buf(rows * cols))

    @classmethod
    def full(cls, rows: int, cols: int, value: float) -> "Matrix":
        return cls._wrap(rows, cols, array("d", [float(value)] * (rows * cols)))

    @classmethod
    def identity(cls, n: int) -> "Matrix":
        buf = _buf(n * n)
        for i in range(n):
            buf[i * (n + 1)] = 1.0
        return cls._wrap(n, n, buf)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "Matrix":
        r = len(rows)
        c = len(rows[0]) if r else 0
        flat = []
        for row in rows:
            if len(row) != c:
                raise ShapeError("ragged rows in matrix literal")
            flat.extend(float(x) for x in row)
        return cls(r, c, flat)

    # -- access -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def __getitem__(self, ij: tuple[int, int]) -> float:
        i, j = ij
        if not (0 <= i < self.rows and 0 <= j < self.cols):
            raise IndexError(f"index {ij} out of range for shape {self.shape}")
        return self._data[i * self.cols + j]

    def row(self, i: int) -> list[float]:
        return list(self._data[i * self.cols : (i + 1) * self.cols])

    def to_rows(self) -> list[list[float]]:
        return [self.row(i) for i in range(self.rows)]

    def to_flat(self) -> list[float]:
        return list(self._data)

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Matrix)
            and self.shape == other.shape
            and self._data == other._data
        )

    __hash__ = None  # equality by value, not meant for dict keys

    # -- arithmetic ---------------------------------------------------

    def _same_shape(self, other: "Matrix", op: str) -> None:
        if self.shape != other.shape:
            raise ShapeError(f"{op}: shapes {self.shape} and {other.shape} differ")

    def __matmul__(self, other: "Matrix") -> "Matrix":
        return matmul(self, other)

    def __add__(self, other: "Matrix") -> "Matrix":
        self._same_shape(other, "add")
        out = _buf(self.size)
        K.ew_add(self._data, other._data, out, self.size)
        return Matrix._wrap(self.rows, self.cols, out)

    def __sub__(self, other: "Matrix") -> "Matrix":
        self._same_shape(other, "sub")
        out = _buf(self.size)
        K.ew_sub(self._data, other._data, out, self.size)
        return Matrix._wrap(self.rows, self.cols, out)

    def __mul__(self, other):
        out = _buf(self.size)
        if isinstance(other, Matrix):
            self._same_shape(other, "hadamard")
            K.ew_mul(self._data, other._data, out, self.size)
        else:
            K.scale(self._data, float(other), out, self.size)
        return Matrix._wrap(self.rows, self.cols, out)

    __rmul__ = __mul__

    def __truediv__(self, other: "Matrix") -> "Matrix":
        self._same_shape(other, "divide")
        out = _buf(self.size)
        K.ew_div(self._data, other._data, out, self.size)
        return Matrix._wrap(self.rows, self.cols, out)

    def __neg__(self) -> "Matrix":
        return self * -1.0

    def t(self) -> "Matrix":
        out = _buf(self.size)
        K.transpose(self._data, out, self.rows, self.cols)
        return Matrix._wrap(self.cols, self.rows, out)

    def add_scalar(self, s: float) -> "Matrix":
        out = _buf(self.size)
        K.add_scalar(self._data, float(s), out, self.size)
        return Matrix._wrap(self.rows, self.cols, out)

    def add_rowvec(self, v: "Matrix") -> "Matrix":
        """Add a 1 x cols row vector to every row."""
        if v.rows != 1 or v.cols != self.cols:
            raise ShapeError(
                f"add_rowvec: vector shape {v.shape} does not broadcast "
                f"over {self.shape}"
            )
        out = _buf(self.size)
        K.add_rowvec(self._data, v._data, out, self.rows, self.cols)
        return Matrix._wrap(self.rows, self.cols, out)

    def relu(self) -> "Matrix":
        out = _buf(self.size)
        K.relu(self._data, out, self.size)
        return Matrix._wrap(self.rows, self.cols, out)

    def relu_grad(self, upstream: "Matrix") -> "Matrix":
        """Gate ``upstream`` by this matrix's positive entries."""
        self._same_shape(upstream, "relu_grad")
        out = _buf(self.size)
        K.relu_grad(self._data, upstream._data, out, self.size)
        return Matrix._wrap(self.rows, self.cols, out)

    def logistic(self) -> "Matrix":
        out = _buf(self.size)
        K.logistic(self._data, out, self.size)
        return Matrix._wrap(self.rows, self.cols, out)

    def sqrt(self) -> "Matrix":
        out = _buf(self.size)
        K.sqrt_ew(self._data, out, self.size)
        return Matrix._wrap(self.rows, self.cols, out)

    def abs(self) -> "Matrix":
        out = _buf(self.size)
        K.abs_ew(self._data, out, self.size)
        return Matrix._wrap(self.rows, self.cols, out)

    def clip(self, lo: float, hi: float) -> "Matrix":
        out = _buf(self.size)
        K.clip(self._data, lo, hi, out, self.size)
        return Matrix._wrap(self.rows, self.cols, out)

    def symmetrize(self) -> "Matrix":
        """(A + A^T) / 2; exact identity on symmetric input."""
        if self.rows != self.cols:
            raise ShapeError(f"symmetrize: matrix is {self.shape}, not square")
        return (self + self.t()) * 0.5

    # -- reductions ---------------------------------------------------

    def row_sums(self) -> list[float]:
        out = _buf(self.rows)
        K.row_sum(self._data, out, self.rows, self.cols)
        return list(out)

    def col_sums(self) -> "Matrix":
        out = _buf(self.cols)
        K.col_sum(self._data, out, self.rows, self.cols)
        return Matrix._wrap(1, self.cols, out)

    def col_means(self) -> "Matrix":
        return self.col_sums() * (1.0 / self.rows)

    def sum(self) -> float:
        s = 0.0
        for x in self._data:
            s += x
        return s

    def mean(self) -> float:
        return self.sum() / self.size

    def max_abs(self) -> float:
        m = 0.0
        for x in self._data:
            a = -x if x < 0.0 else x
            if a > m:
                m = a
        return m

    def is_symmetric(self, tol: float = 0.0) -> bool:
        if self.rows != self.cols:
            return False
        d = self._data
        n = self.cols
        for i in range(n):
            for j in range(i + 1, n):
                if abs(d[i * n + j] - d[j * n + i]) > tol:
                    return False
        return True

    def all_finite(self) -> bool:
        return all(math.isfinite(x) for x in self._data)

    def perturbed(self, i: int, j: int, delta: float) -> "Matrix":
        """Copy with entry (i, j) shifted by delta (finite differences)."""
        buf = array("d", self._data)
        buf[i * self.cols + j] += delta
        return Matrix._wrap(self.rows, self.cols, buf)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Standard matrix product a @ b."""
    if a.cols != b.rows:
        raise ShapeError(
            f"matmul: shapes {a.shape} and {b.shape} are incompatible "
            f"(inner dimensions {a.cols} != {b.rows})"
        )
    out = _buf(a.rows * b.cols)
    K.mm(a._data, b._data, out, a.rows, a.cols, b.cols)
    return Matrix._wrap(a.rows, b.cols, out)


# ---------------------------------------------------------------------------
# RNG
# ---------------------------------------------------------------------------

def _mix64(x: int) -> int:
    """splitmix64 finalizer (bijective 64-bit mix)."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class RngStream:
    """Deterministic xoshiro256++ stream.

    Single-owner: callers that need parallel or independent randomness must
    fork child streams with :meth:`child` instead of sharing one stream.
    """

    __slots__ = ("seed", "_state")

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        state = array("Q", [0, 0, 0, 0])
        s = self.seed
        for i in range(4):
            s = (s + 0x9E3779B97F4A7C15) & _MASK64
            state[i] = _mix64(s)
        self._state = state

    def child(self, key: int | str) -> "RngStream":
        """Independent stream derived from this stream's seed and a key.

        Derivation uses the seed, not the current position, so forking is
        reproducible regardless of how much the parent has already drawn.
        """
        if isinstance(key, str):
            key = int.from_bytes(
                hashlib.sha256(key.encode("utf-8")).digest()[:8], "little"
            )
        return RngStream(_mix64(_mix64(self.seed) + (key & _MASK64) * 0x9E3779B97F4A7C15))

    # -- draws ----------------------------------------------------------

    def next_u64(self) -> int:
        return K.next_u64(self._state)

    def uniform(self) -> float:
        """One double in [0, 1)."""
        return (K.next_u64(self._state) >> 11) * (1.0 / 9007199254740992.0)

    def uniforms(self, n: int) -> array:
        out = _buf(n)
        K.fill_uniform(self._state, out, n)
        return out

    def normals(self, n: int) -> array:
        out = _buf(n)
        K.fill_normal(self._state, out, n)
        return out

    def normal_matrix(self, rows: int, cols: int) -> Matrix:
        return Matrix._wrap(rows, cols, self.normals(rows * cols))

    def uniform_matrix(self, rows: int, cols: int, lo: float, hi: float) -> Matrix:
        buf = self.uniforms(rows * cols)
        span = hi - lo
        for i in range(len(buf)):
            buf[i] = lo + span * buf[i]
        return Matrix._wrap(rows, cols, buf)

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("randbelow requires n > 0")
        threshold = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            u = K.next_u64(self._state)
            if u < threshold:
                return u % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), order randomized."""
        if k > n:
            raise ValueError(f"cannot sample {k} items from {n}")
        idx = list(range(n))
        for i in range(k):
            j = i + self.randbelow(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]


def normal_draws(rng: RngStream, n: int, mean: float = 0.0, std: float = 1.0) -> list[float]:
    """n normal deviates with the given mean and std; advances rng.

    The stream is consumed identically for every std, so std=0 yields n exact
    copies of ``mean`` without perturbing downstream draws relative to std>0.
    """
    if std < 0:
        raise ValueError(f"std must be nonnegative, got {std}")
    return [mean + std * z for z in rng.normals(n)]
