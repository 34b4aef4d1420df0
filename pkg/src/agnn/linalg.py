"""Dense and sparse kernels.

Dense tensors are plain 2-D ``float64`` numpy arrays. Sparse matrices use a
small CSR container whose multiply kernel is delegated to ``scipy.sparse``;
scipy accumulates each output row over stored entries in ascending column
order, which keeps results reproducible run to run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from agnn.errors import ContractError, DimensionError, NonFiniteError

Tensor = np.ndarray

UNARY_OPS = ("relu", "sigmoid", "softplus", "neg", "exp")
BINARY_OPS = ("add", "sub", "hadamard", "maximum")


def as_tensor(x) -> Tensor:
    """Coerce to a 2-D float64 array (scalars become 1x1, vectors a row)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"tensors are 2-D, got ndim={arr.ndim}")
    return arr


def zeros(rows: int, cols: int) -> Tensor:
    return np.zeros((rows, cols), dtype=np.float64)


def ones(rows: int, cols: int) -> Tensor:
    return np.ones((rows, cols), dtype=np.float64)


def eye(n: int) -> Tensor:
    return np.eye(n, dtype=np.float64)


def check_finite(x: Tensor, where: str) -> Tensor:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"non-finite value produced by {where}")
    return x


def _check_2d(*arrays: Tensor) -> None:
    for a in arrays:
        if a.ndim != 2:
            raise DimensionError(f"expected a 2-D tensor, got shape {a.shape}")


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed sparse row matrix with validated structure."""

    rows: int
    cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    _scipy: sp.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if indptr.shape != (self.rows + 1,) or indptr[0] != 0:
            raise ContractError("row pointer must have rows+1 entries starting at 0")
        if np.any(np.diff(indptr) < 0) or indptr[-1] != len(indices):
            raise ContractError("row pointer must be nondecreasing and end at nnz")
        if len(data) != len(indices):
            raise ContractError("index and value arrays differ in length")
        if len(indices) and (indices.min() < 0 or indices.max() >= self.cols):
            raise ContractError("column index out of range")
        owner = np.repeat(np.arange(self.rows), np.diff(indptr))
        same_row = owner[1:] == owner[:-1]
        if np.any(np.diff(indices)[same_row] <= 0):
            raise ContractError("column indices within a row must strictly increase")
        if np.any(data == 0.0):
            raise ContractError("explicit zeros are not stored")
        check_finite(data, "SparseMatrix")
        for name, arr in (("indptr", indptr), ("indices", indices), ("data", data)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(
            self, "_scipy",
            sp.csr_matrix((data, indices, indptr), shape=(self.rows, self.cols)),
        )

    @classmethod
    def from_coo(cls, rows: int, cols: int, row_idx, col_idx, values) -> "SparseMatrix":
        """Build from triplets; duplicate coordinates keep the last value."""
        row_idx = np.asarray(row_idx, dtype=np.int64)
        col_idx = np.asarray(col_idx, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if len(row_idx) and (row_idx.min() < 0 or row_idx.max() >= rows):
            raise ContractError("row index out of range")
        if len(col_idx) and (col_idx.min() < 0 or col_idx.max() >= cols):
            raise ContractError("column index out of range")
        flat = row_idx * cols + col_idx
        # unique over the reversed stream keeps the last occurrence
        keys, first = np.unique(flat[::-1], return_index=True)
        vals = values[::-1][first]
        keep = vals != 0.0
        keys, vals = keys[keep], vals[keep]
        r, c = np.divmod(keys, cols) if cols else (keys, keys)
        counts = np.bincount(r, minlength=rows)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        return cls(rows, cols, indptr, c, vals)

    @classmethod
    def from_dense(cls, dense) -> "SparseMatrix":
        dense = as_tensor(dense)
        r, c = np.nonzero(dense)
        return cls.from_coo(dense.shape[0], dense.shape[1], r, c, dense[r, c])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return len(self.data)

    def row_of_entry(self) -> np.ndarray:
        """Row index of every stored entry, in storage order."""
        return np.repeat(np.arange(self.rows), np.diff(self.indptr))

    def to_dense(self) -> Tensor:
        out = zeros(self.rows, self.cols)
        out[self.row_of_entry(), self.indices] = self.data
        return out

    def transpose(self) -> "SparseMatrix":
        t = self._scipy.transpose().tocsr()
        t.sort_indices()
        return SparseMatrix(self.cols, self.rows, t.indptr, t.indices, t.data)

    @cached_property
    def T(self) -> "SparseMatrix":
        return self.transpose()

    def to_scipy(self) -> sp.csr_matrix:
        return self._scipy

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )

    __hash__ = object.__hash__


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_2d(a, b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul")


def spmm(s: SparseMatrix, d: Tensor) -> Tensor:
    _check_2d(d)
    if s.cols != d.shape[0]:
        raise DimensionError(f"spmm: {s.shape} x {d.shape}")
    out = np.asarray(s.to_scipy() @ d, dtype=np.float64)
    return check_finite(out, "spmm")


def softplus(x: Tensor) -> Tensor:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x: Tensor) -> Tensor:
    # Two-branch form avoids exp overflow for large |x|.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0.0)


def add_row_bias(a: Tensor, bias: Tensor) -> Tensor:
    """The only broadcast allowed: a 1 x cols bias added to every row."""
    _check_2d(a, bias)
    if bias.shape != (1, a.shape[1]):
        raise DimensionError(f"bias {bias.shape} does not fit {a.shape}")
    return check_finite(a + bias, "add_row_bias")


def elementwise(op: str, a: Tensor, b: Tensor | None = None, *, scale: float | None = None) -> Tensor:
    """Apply a per-entry operation.

    Unary tags: relu, sigmoid, softplus, neg, exp, and ``scale`` (needs the
    ``scale`` keyword). Binary tags: add, sub, hadamard, maximum. Binary
    operands must have identical shapes.
    """
    _check_2d(a)
    if op in BINARY_OPS:
        if b is None:
            raise ContractError(f"{op} needs two operands")
        _check_2d(b)
        if a.shape != b.shape:
            raise DimensionError(f"{op}: {a.shape} vs {b.shape}")
        if op == "add":
            out = a + b
        elif op == "sub":
            out = a - b
        elif op == "hadamard":
            out = a * b
        else:
            # ties resolve to the first operand
            out = np.where(a >= b, a, b)
    elif op == "scale":
        if scale is None:
            raise ContractError("scale needs a factor")
        out = a * float(scale)
    elif op == "relu":
        out = relu(a)
    elif op == "sigmoid":
        out = sigmoid(a)
    elif op == "softplus":
        out = softplus(a)
    elif op == "neg":
        out = -a
    elif op == "exp":
        with np.errstate(over="ignore"):
            out = np.exp(a)
    else:
        raise ContractError(f"unknown elementwise op {op!r}")
    return check_finite(out, op)


def row_logsumexp(a: Tensor) -> Tensor:
    m = a.max(axis=1, keepdims=True)
    return m + np.log(np.exp(a - m).sum(axis=1, keepdims=True))


def row_softmax(a: Tensor) -> Tensor:
    _check_2d(a)
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return check_finite(e / e.sum(axis=1, keepdims=True), "row_softmax")


def log_softmax(a: Tensor) -> Tensor:
    _check_2d(a)
    return check_finite(a - row_logsumexp(a), "log_softmax")
