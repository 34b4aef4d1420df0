"""Training objectives: cross-entropy, MSE, and the edge-likelihood regularizer.

The regularizer is the Bernoulli negative log-likelihood of the adjacency
matrix when edge ``i -> j`` fires with probability ``sigmoid(s_i . r_j)``,
averaged over all ``n**2`` ordered pairs (diagonal included)::

    L_reg = (1/n^2) * ( sum_ij softplus(s_i . r_j) - sum_{(i,j) in E} s_i . r_j )
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from agnn import linalg
from agnn.autodiff import Tape, Variable
from agnn.errors import ConfigError, ContractError, DimensionError, InputError
from agnn.linalg import SparseMatrix


@dataclass(frozen=True)
class LabelSet:
    indices: np.ndarray
    labels: np.ndarray
    num_classes: int | None = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        is_class = self.num_classes is not None
        lab = np.asarray(self.labels, dtype=np.int64 if is_class else np.float64)
        if idx.shape != lab.shape or idx.ndim != 1:
            raise InputError("indices and labels must be equal-length vectors")
        if len(np.unique(idx)) != len(idx):
            raise InputError("labeled indices must be unique")
        if is_class and len(lab) and (lab.min() < 0 or lab.max() >= self.num_classes):
            raise InputError(f"class labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return len(self.indices)

    def subset(self, idx) -> "LabelSet":
        """Restrict to the node ids in ``idx`` (kept in the given order)."""
        lookup = dict(zip(self.indices.tolist(), self.labels.tolist()))
        idx = np.asarray(idx, dtype=np.int64)
        return LabelSet(idx, np.array([lookup[i] for i in idx.tolist()]), self.num_classes)

    def by_class(self) -> dict[int, np.ndarray]:
        return {c: self.indices[self.labels == c] for c in range(self.num_classes)}


@dataclass(frozen=True)
class LossReport:
    error_term: float
    reg_term: float
    total: float
    lam: float


def cross_entropy(logits: Variable, labels: LabelSet, tape: Tape) -> Variable:
    """Summed negative log-probability of the true class over labeled rows."""
    if len(labels) == 0:
        raise ContractError("cross-entropy over an empty label set")
    if labels.indices.max() >= logits.shape[0]:
        raise ContractError("labeled index beyond the number of rows")
    return tape.record("softmax_cross_entropy", logits, index=labels.indices, labels=labels.labels)


def edge_likelihood(s, r) -> float:
    s = np.ravel(s)
    r = np.ravel(r)
    if s.shape != r.shape:
        raise DimensionError(f"embedding lengths differ: {s.shape} vs {r.shape}")
    return float(linalg.sigmoid(np.array([[s @ r]]))[0, 0])


def _edge_arrays(A: SparseMatrix) -> tuple[np.ndarray, np.ndarray]:
    return A.row_of_entry(), A.indices


def regularization_loss(S: Variable, R: Variable, A: SparseMatrix, tape: Tape) -> Variable:
    """Exact regularizer over all n^2 pairs (``A`` without self-loops)."""
    if S.shape != R.shape:
        raise DimensionError(f"S {S.shape} vs R {R.shape}")
    n = S.shape[0]
    if A.shape != (n, n):
        raise DimensionError(f"adjacency {A.shape} for {n} nodes")
    logits = tape.record("matmul", S, tape.record("transpose", R))
    partition = tape.record("sum", tape.record("softplus", logits))
    src, dst = _edge_arrays(A)
    if len(src):
        observed = tape.record(
            "sum",
            tape.record("hadamard", tape.record("slice", S, rows=src), tape.record("slice", R, rows=dst)),
        )
        partition = tape.record("sub", partition, observed)
    return tape.record("scale", partition, factor=1.0 / (n * n))


def regularization_loss_sampled(
    S: Variable,
    R: Variable,
    A: SparseMatrix,
    tape: Tape,
    rng: np.random.Generator,
    negatives: int = 5,
) -> Variable:
    """Unbiased estimate of :func:`regularization_loss` for large graphs.

    The edge term is exact; the all-pairs softplus sum is estimated from
    ``negatives * |E|`` uniformly drawn ordered pairs. Not the exact
    objective: opt in only when the n x n path does not fit.
    """
    if S.shape != R.shape:
        raise DimensionError(f"S {S.shape} vs R {R.shape}")
    n = S.shape[0]
    src, dst = _edge_arrays(A)
    m = max(1, negatives * max(len(src), 1))
    i = rng.integers(0, n, size=m)
    j = rng.integers(0, n, size=m)
    pair = tape.record(
        "sum",
        tape.record("hadamard", tape.record("slice", S, rows=i), tape.record("slice", R, rows=j)),
        axis=1,
    )
    partition = tape.record("scale", tape.record("sum", tape.record("softplus", pair)), factor=n * n / m)
    if len(src):
        observed = tape.record(
            "sum",
            tape.record("hadamard", tape.record("slice", S, rows=src), tape.record("slice", R, rows=dst)),
        )
        partition = tape.record("sub", partition, observed)
    return tape.record("scale", partition, factor=1.0 / (n * n))


def regularization_loss_oracle(S, R, A) -> float:
    """Scalar double loop over every ordered pair; reference for tests."""
    S = np.asarray(S, dtype=float)
    R = np.asarray(R, dtype=float)
    n = S.shape[0]
    dense = A.to_dense() if isinstance(A, SparseMatrix) else np.asarray(A)
    total = 0.0
    for i in range(n):
        for j in range(n):
            t = 0.0
            for k in range(S.shape[1]):
                t += S[i, k] * R[j, k]
            log1pexp = max(t, 0.0) + math.log1p(math.exp(-abs(t)))
            total += t * dense[i, j] - log1pexp
    return -total / (n * n)


def total_loss(error: Variable, reg: Variable | None, lam: float, tape: Tape) -> tuple[Variable, LossReport]:
    """error + lam * reg, plus a plain-number summary."""
    if lam < 0:
        raise ConfigError(f"lambda must be non-negative, got {lam}")
    if reg is None:
        return error, LossReport(error.item(), 0.0, error.item(), lam)
    total = tape.record("add", error, tape.record("scale", reg, factor=lam))
    return total, LossReport(error.item(), reg.item(), total.item(), lam)


def regression_loss(pred: Variable, target, tape: Tape) -> Variable:
    """Mean squared error."""
    target = target if isinstance(target, Variable) else tape.constant(target)
    if pred.shape != target.shape:
        raise DimensionError(f"pred {pred.shape} vs target {target.shape}")
    diff = tape.record("sub", pred, target)
    return tape.record("mean", tape.record("hadamard", diff, diff))
