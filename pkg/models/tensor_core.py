"""Dense tensors over exact rationals or float64, matricization, Kronecker
products, per-mode operators and matrix rank.

Exact tensors hold ``fractions.Fraction`` objects in numpy object arrays,
float tensors hold float64. A computation never mixes the two.
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from models.config import DEFAULT_TOL, SCALAR_MODES
from models.errors import (
    InvalidPartitionError,
    NumericError,
    ScalarModeError,
    ShapeError,
    SingularRepresentationError,
)

logger = logging.getLogger(__name__)


def as_exact(values):
    # Any nested sequence / array of numbers or "p/q" strings -> Fraction array
    arr = np.array(values, dtype=object)
    flat = np.empty(arr.size, dtype=object)
    flat[:] = [v if isinstance(v, Fraction) else Fraction(v) for v in arr.ravel()]
    return flat.reshape(arr.shape)


def as_float(values):
    return np.array(values, dtype=object).astype(np.float64)


def to_mode(values, mode):
    if mode == "exact":
        return as_exact(values)
    if mode == "float":
        return as_float(values)
    raise ScalarModeError(f"Unknown scalar mode '{mode}'")


@dataclass(frozen=True, eq=False)
class DenseTensor:
    data: np.ndarray
    mode: str = "exact"

    def __post_init__(self):
        if self.mode not in SCALAR_MODES:
            raise ScalarModeError(f"Unknown scalar mode '{self.mode}'")
        expected = np.dtype(object) if self.mode == "exact" else np.dtype(np.float64)
        if self.data.dtype != expected:
            raise ScalarModeError(
                f"{self.mode} tensor cannot hold entries of dtype {self.data.dtype}"
            )
        self.data.flags.writeable = False

    @classmethod
    def exact(cls, values):
        return cls(as_exact(values), "exact")

    @classmethod
    def numeric(cls, values):
        return cls(as_float(values), "float")

    @classmethod
    def of(cls, values, mode):
        return cls(to_mode(values, mode), mode)

    @property
    def order(self):
        return self.data.ndim

    @property
    def dims(self):
        return tuple(self.data.shape)

    @property
    def size(self):
        return self.data.size

    def entries(self):
        # Row-major, last index fastest
        return list(self.data.ravel())

    def astype(self, mode):
        if mode == self.mode:
            return self
        return type(self).of(self.data, mode)

    def equals(self, other):
        return (
            self.mode == other.mode
            and self.dims == other.dims
            and bool(np.all(self.data == other.data))
        )


@dataclass(frozen=True, eq=False)
class Matrix(DenseTensor):

    def __post_init__(self):
        super().__post_init__()
        if self.data.ndim != 2:
            raise ShapeError(f"Matrix needs 2 dimensions, got {self.data.ndim}")

    @classmethod
    def identity(cls, n, mode="exact"):
        return cls.of(np.eye(n, dtype=np.int64), mode)

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class IndexPartition:
    # 0-based mode indices; P indexes rows, Q indexes columns
    P: tuple
    Q: tuple

    def __post_init__(self):
        object.__setattr__(self, "P", tuple(int(p) for p in self.P))
        object.__setattr__(self, "Q", tuple(int(q) for q in self.Q))
        for name, modes in (("P", self.P), ("Q", self.Q)):
            if any(b <= a for a, b in zip(modes, modes[1:])):
                raise InvalidPartitionError(f"{name} must be strictly increasing: {modes}")
            if any(m < 0 for m in modes):
                raise InvalidPartitionError(f"{name} holds a negative mode index")
        if set(self.P) & set(self.Q):
            raise InvalidPartitionError("P and Q overlap")

    @property
    def n_modes(self):
        return len(self.P) + len(self.Q)

    @property
    def is_even(self):
        return len(self.P) == len(self.Q)

    def check_covers(self, order):
        if sorted(self.P + self.Q) != list(range(order)):
            raise InvalidPartitionError(
                f"Partition does not cover the {order} modes exactly"
            )

    def to_dict(self):
        return {"P": list(self.P), "Q": list(self.Q)}


def _same_mode(*tensors):
    modes = {t.mode for t in tensors}
    if len(modes) > 1:
        raise ScalarModeError("Cannot mix exact and float tensors")
    return modes.pop()


def matricize(t, part):
    part.check_covers(t.order)
    rows = math.prod(t.dims[p] for p in part.P)
    cols = math.prod(t.dims[q] for q in part.Q)
    data = np.transpose(t.data, part.P + part.Q).reshape(rows, cols)
    return Matrix(np.array(data), t.mode)


def unmatricize(m, part, dims):
    # Inverse placement of matricize
    dims = tuple(dims)
    part.check_covers(len(dims))
    order = part.P + part.Q
    shaped = m.data.reshape([dims[p] for p in part.P] + [dims[q] for q in part.Q])
    return DenseTensor(np.array(np.transpose(shaped, np.argsort(order))), m.mode)


def outer(a, b):
    mode = _same_mode(a, b)
    return DenseTensor(np.multiply.outer(a.data, b.data), mode)


def kronecker(a, b):
    mode = _same_mode(a, b)
    data = a.data[:, None, :, None] * b.data[None, :, None, :]
    return Matrix(data.reshape(a.rows * b.rows, a.cols * b.cols), mode)


def apply_operator(t, fs):
    if len(fs) != t.order:
        raise ShapeError(f"Expected {t.order} operators, got {len(fs)}")
    _same_mode(t, *fs)
    out = t.data
    for axis, f in enumerate(fs):
        if f.cols != t.dims[axis]:
            raise ShapeError(
                f"Operator {axis} has {f.cols} columns but mode {axis} has dim {t.dims[axis]}"
            )
        out = np.moveaxis(np.tensordot(f.data, out, axes=([1], [axis])), 0, axis)
    return DenseTensor(np.array(out), t.mode)


def _integer_rows(data):
    # Scale each rational row to coprime integers; rank is unchanged
    rows, cols = data.shape
    out = np.empty((rows, cols), dtype=object)
    for r in range(rows):
        row = data[r]
        den = math.lcm(*(x.denominator for x in row)) if cols else 1
        ints = [x.numerator * (den // x.denominator) for x in row]
        g = math.gcd(*ints) if cols else 0
        if g > 1:
            ints = [v // g for v in ints]
        out[r, :] = ints
    return out


def _bareiss_rank(a):
    # Fraction-free elimination; every division below is exact
    n_rows, n_cols = a.shape
    rank = 0
    prev = 1
    for col in range(n_cols):
        if rank == n_rows:
            break
        column = a[rank:, col]
        candidates = [i for i, v in enumerate(column) if v != 0]
        if not candidates:
            continue
        pivot_row = rank + max(candidates, key=lambda i: abs(column[i]))
        if pivot_row != rank:
            a[[rank, pivot_row]] = a[[pivot_row, rank]]
        pivot = a[rank, col]
        a[rank + 1:, col + 1:] = (
            pivot * a[rank + 1:, col + 1:] - np.outer(a[rank + 1:, col], a[rank, col + 1:])
        ) // prev
        a[rank + 1:, col] = 0
        prev = pivot
        rank += 1
    return rank


def rank_exact(m):
    if m.mode != "exact":
        raise ScalarModeError("rank_exact needs an exact (rational) matrix")
    if m.rows == 0 or m.cols == 0:
        return 0
    return _bareiss_rank(_integer_rows(m.data))


def singular_values(m):
    if m.mode != "float":
        raise ScalarModeError("singular values are only exposed in float mode")
    if not np.all(np.isfinite(m.data)):
        raise NumericError("Matrix has non-finite entries")
    if m.size == 0:
        return np.zeros(0)
    return np.linalg.svd(m.data, compute_uv=False)


def rank_threshold(sv, shape, tol=DEFAULT_TOL):
    # sigma > tol * max(rows, cols) * sigma_max
    if len(sv) == 0:
        return 0.0
    return tol * max(shape) * float(sv[0])


def rank_numeric(m, tol=DEFAULT_TOL):
    if tol <= 0:
        raise NumericError(f"Tolerance must be positive, got {tol}")
    sv = singular_values(m)
    threshold = rank_threshold(sv, m.dims, tol)
    return int(np.count_nonzero(sv > threshold))


def matrix_rank(m, tol=DEFAULT_TOL):
    if m.mode == "exact":
        return rank_exact(m)
    return rank_numeric(m, tol)


def inverse_exact(m):
    """Gauss-Jordan inverse over the rationals."""
    if m.mode != "exact":
        raise ScalarModeError("inverse_exact needs an exact matrix")
    n = m.rows
    if m.cols != n:
        raise ShapeError("Only square matrices can be inverted")

    x = np.array(m.data, dtype=object)
    y = as_exact(np.eye(n, dtype=np.int64))

    for i in range(n):
        # Pick a nonzero pivot in column i
        for j in range(i, n):
            if x[j, i] != 0:
                if j != i:
                    x[[i, j]] = x[[j, i]]
                    y[[i, j]] = y[[j, i]]
                break
        else:
            raise SingularRepresentationError("Matrix is not invertible")

        pivot = x[i, i]
        x[i, :] = x[i, :] / pivot
        y[i, :] = y[i, :] / pivot

        for j in range(n):
            if j != i and x[j, i] != 0:
                factor = x[j, i]
                x[j, :] = x[j, :] - factor * x[i, :]
                y[j, :] = y[j, :] - factor * y[i, :]

    return Matrix(y, "exact")


def inverse(m):
    if m.mode == "exact":
        return inverse_exact(m)
    if m.rows != m.cols:
        raise ShapeError("Only square matrices can be inverted")
    if matrix_rank(m) < m.rows:
        raise SingularRepresentationError("Matrix is not invertible")
    return Matrix(np.linalg.inv(m.data), "float")
