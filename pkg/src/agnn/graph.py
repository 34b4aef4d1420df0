"""Directed graphs and the two normalized propagation operators.

With ``B = A + I`` (self-loops merged, never doubled), out-degree ``o`` and
in-degree ``p`` taken on ``B``:

    A_tilde[i, j] = B[i, j] / sqrt(o[i] * p[j])      (outgoing side, rows = sources)
    A_hat[j, i]   = B[i, j] / sqrt(p[j] * o[i])      (incoming side)

so ``A_hat`` is the exact transpose of ``A_tilde``. Taking degrees on ``B``
keeps every node (pure sources and pure sinks included) at degree >= 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from agnn import linalg
from agnn.errors import InputError
from agnn.linalg import SparseMatrix, Tensor


@dataclass(frozen=True, eq=False)
class PropagationOperators:
    A_tilde: SparseMatrix
    A_hat: SparseMatrix


@dataclass(frozen=True, eq=False)
class DirectedGraph:
    n: int
    edges: tuple[tuple[int, int], ...]
    A: SparseMatrix
    out_degree: np.ndarray
    in_degree: np.ndarray
    features: Tensor | None = None

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def operators(self) -> PropagationOperators:
        return build_operators(self)

    def successors(self, v: int) -> np.ndarray:
        return self.A.indices[self.A.indptr[v]:self.A.indptr[v + 1]]

    def predecessors(self, v: int) -> np.ndarray:
        At = self.A.T
        return At.indices[At.indptr[v]:At.indptr[v + 1]]

    def with_features(self, features: Tensor | None) -> "DirectedGraph":
        if features is not None:
            features = linalg.as_tensor(features)
            if features.shape[0] != self.n:
                raise InputError(f"features have {features.shape[0]} rows for {self.n} nodes")
        return DirectedGraph(self.n, self.edges, self.A, self.out_degree, self.in_degree, features)


def from_edge_list(n: int, pairs, features: Tensor | None = None) -> DirectedGraph:
    """Build a graph from (source, target) pairs; duplicates collapse."""
    if n <= 0:
        raise InputError("a graph needs at least one node")
    arr = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
    if len(arr) and (arr.min() < 0 or arr.max() >= n):
        bad = arr[(arr < 0).any(axis=1) | (arr >= n).any(axis=1)][0]
        raise InputError(f"edge {tuple(bad.tolist())} out of range for n={n}")
    A = SparseMatrix.from_coo(n, n, arr[:, 0], arr[:, 1], np.ones(len(arr)))
    rows = A.row_of_entry()
    edges = tuple(zip(rows.tolist(), A.indices.tolist()))
    out_degree = np.diff(A.indptr)
    in_degree = np.bincount(A.indices, minlength=n)
    g = DirectedGraph(n, edges, A, out_degree, in_degree)
    return g.with_features(features) if features is not None else g


def one_hot_features(g: DirectedGraph) -> Tensor:
    return linalg.eye(g.n)


def build_operators(g: DirectedGraph) -> PropagationOperators:
    n = g.n
    src = np.concatenate([np.array([e[0] for e in g.edges], dtype=np.int64), np.arange(n)])
    dst = np.concatenate([np.array([e[1] for e in g.edges], dtype=np.int64), np.arange(n)])
    B = SparseMatrix.from_coo(n, n, src, dst, np.ones(len(src)))
    out_b = np.diff(B.indptr).astype(np.float64)
    in_b = np.bincount(B.indices, minlength=n).astype(np.float64)

    rows = B.row_of_entry()
    cols = B.indices
    tilde_vals = B.data / np.sqrt(out_b[rows] * in_b[cols])
    A_tilde = SparseMatrix(n, n, B.indptr, B.indices, tilde_vals)

    # incoming operator from its own formula on B^T: rows index targets
    Bt = B.T
    t_rows = Bt.row_of_entry()
    t_cols = Bt.indices
    hat_vals = Bt.data / np.sqrt(in_b[t_rows] * out_b[t_cols])
    A_hat = SparseMatrix(n, n, Bt.indptr, Bt.indices, hat_vals)
    return PropagationOperators(A_tilde, A_hat)


def symmetrize(g: DirectedGraph) -> DirectedGraph:
    pairs = list(g.edges) + [(j, i) for i, j in g.edges]
    return from_edge_list(g.n, pairs, g.features)


def permute(g: DirectedGraph, perm) -> DirectedGraph:
    """Relabel node ``i`` as ``perm[i]``; features move with their node."""
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(g.n)):
        raise InputError("perm must be a permutation of range(n)")
    pairs = [(int(perm[i]), int(perm[j])) for i, j in g.edges]
    features = None
    if g.features is not None:
        features = np.empty_like(g.features)
        features[perm] = g.features
    return from_edge_list(g.n, pairs, features)


def disjoint_union(graphs) -> tuple[DirectedGraph, np.ndarray]:
    """Stack graphs block-diagonally; returns the union and each node's graph id."""
    pairs, owner, feats = [], [], []
    offset = 0
    for k, g in enumerate(graphs):
        pairs.extend((i + offset, j + offset) for i, j in g.edges)
        owner.append(np.full(g.n, k, dtype=np.int64))
        feats.append(g.features)
        offset += g.n
    features = None
    if all(f is not None for f in feats):
        features = np.vstack(feats)
    return from_edge_list(offset, pairs, features), np.concatenate(owner)
