"""Dataset files and synthetic generators.

File formats (plain text, 0-based node ids):

* edges:    ``source<TAB>target`` per line, optional first line ``#nodes N``
* features: ``id<TAB>v1,v2,...,vd`` per line
* labels:   ``id<TAB>class`` (or ``graph_id<TAB>real`` for graph targets)
* graph-set manifest: ``graph_id<TAB>edge_file<TAB>target[<TAB>feature_file]``
  with paths relative to the manifest
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from agnn import linalg
from agnn.errors import ConfigError, InputError
from agnn.graph import DirectedGraph, from_edge_list
from agnn.linalg import Tensor
from agnn.loss import LabelSet

NODE_TASK = "node_classification"
GRAPH_TASK = "graph_regression"


@dataclass
class DatasetBundle:
    graph: DirectedGraph
    labels: LabelSet | None
    task: str = NODE_TASK
    name: str = ""
    target: float | None = None

    @property
    def features(self) -> Tensor | None:
        return self.graph.features

    def feature_matrix(self) -> Tensor:
        """Stored features, or the identity when none were given."""
        if self.graph.features is None:
            return linalg.eye(self.graph.n)
        return self.graph.features


@dataclass
class GraphSet:
    graphs: list[DatasetBundle]
    train_idx: np.ndarray
    test_idx: np.ndarray
    name: str = ""

    @property
    def targets(self) -> np.ndarray:
        return np.array([b.target for b in self.graphs], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.graphs)


@dataclass
class SbmSpec:
    block_sizes: list[int]
    probs: np.ndarray
    seed: int = 0
    features: str = "one_hot"

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        k = len(self.block_sizes)
        if self.probs.shape != (k, k):
            raise ConfigError(f"probability matrix must be {k}x{k}, got {self.probs.shape}")
        if np.any(self.probs < 0) or np.any(self.probs > 1):
            raise ConfigError("block probabilities must lie in [0, 1]")
        if any(b <= 0 for b in self.block_sizes):
            raise ConfigError("block sizes must be positive")


# -- parsing ---------------------------------------------------------------

def _lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line:
                yield lineno, line


def read_edges(path) -> tuple[int | None, list[tuple[int, int]]]:
    path = Path(path)
    declared, pairs = None, []
    for lineno, line in _lines(path):
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "nodes":
                try:
                    declared = int(parts[1])
                except ValueError:
                    raise InputError(f"{path}:{lineno}: bad node count {parts[1]!r}") from None
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InputError(f"{path}:{lineno}: expected 'source<TAB>target', got {line!r}")
        try:
            s, t = int(parts[0]), int(parts[1])
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-integer node id in {line!r}") from None
        if s < 0 or t < 0:
            raise InputError(f"{path}:{lineno}: negative node id")
        pairs.append((s, t))
    return declared, pairs


def read_features(path, n: int) -> Tensor:
    path = Path(path)
    rows: dict[int, list[float]] = {}
    width = None
    for lineno, line in _lines(path):
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise InputError(f"{path}:{lineno}: expected 'id<TAB>v1,v2,...'")
        try:
            node = int(parts[0])
            values = [float(v) for v in parts[1].replace(" ", "").split(",")]
        except ValueError:
            raise InputError(f"{path}:{lineno}: malformed feature line") from None
        if node < 0 or node >= n:
            raise InputError(f"{path}:{lineno}: node {node} not in graph (n={n})")
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise InputError(f"{path}:{lineno}: expected {width} values, got {len(values)}")
        rows[node] = values
    if not rows:
        raise InputError(f"{path}: no feature rows")
    missing = sorted(set(range(n)) - rows.keys())
    if missing:
        raise InputError(f"{path}: no features for node {missing[0]} ({len(missing)} missing)")
    return np.array([rows[i] for i in range(n)], dtype=np.float64)


def read_labels(path, n: int | None = None, regression: bool = False) -> LabelSet:
    path = Path(path)
    ids, values = [], []
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) != 2:
            raise InputError(f"{path}:{lineno}: expected 'id<TAB>label'")
        try:
            node = int(parts[0])
            value = float(parts[1]) if regression else int(parts[1])
        except ValueError:
            raise InputError(f"{path}:{lineno}: malformed label line {line!r}") from None
        if node < 0 or (n is not None and node >= n):
            raise InputError(f"{path}:{lineno}: node {node} not in graph")
        if not regression and value < 0:
            raise InputError(f"{path}:{lineno}: negative class")
        ids.append(node)
        values.append(value)
    if not ids:
        raise InputError(f"{path}: label file is empty")
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate label ids")
    num_classes = None if regression else int(max(values)) + 1
    return LabelSet(np.array(ids), np.array(values), num_classes)


def load_edge_list_dataset(edges_path, features_path=None, labels_path=None, name: str = "") -> DatasetBundle:
    declared, pairs = read_edges(edges_path)
    inferred = 1 + max((max(p) for p in pairs), default=-1)
    if declared is not None and declared < inferred:
        raise InputError(f"{edges_path}: header declares {declared} nodes but ids reach {inferred - 1}")
    n = declared if declared is not None else inferred
    if n == 0:
        raise InputError(f"{edges_path}: no nodes")
    features = read_features(features_path, n) if features_path else None
    labels = read_labels(labels_path, n) if labels_path else None
    g = from_edge_list(n, pairs, features)
    return DatasetBundle(g, labels, NODE_TASK, name or Path(edges_path).stem)


# -- writing ---------------------------------------------------------------

def write_edges(g: DirectedGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#nodes {g.n}\n")
        for s, t in g.edges:
            fh.write(f"{s}\t{t}\n")


def write_features(x: Tensor, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, row in enumerate(x):
            fh.write(f"{i}\t" + ",".join(repr(float(v)) for v in row) + "\n")


def write_labels(labels: LabelSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, y in zip(labels.indices.tolist(), labels.labels.tolist()):
            fh.write(f"{i}\t{y!r}\n" if labels.num_classes is None else f"{i}\t{int(y)}\n")


def write_graph_set(gs: GraphSet, directory) -> Path:
    """Write one edge/feature file pair per graph plus a manifest; returns its path."""
    directory = Path(directory)
    (directory / "graphs").mkdir(parents=True, exist_ok=True)
    manifest = directory / "manifest.tsv"
    with open(manifest, "w", encoding="utf-8") as fh:
        for k, b in enumerate(gs.graphs):
            edge_file = Path("graphs") / f"g{k}.edges"
            write_edges(b.graph, directory / edge_file)
            line = f"{k}\t{edge_file.as_posix()}\t{b.target!r}"
            if b.graph.features is not None:
                feat_file = Path("graphs") / f"g{k}.features"
                write_features(b.graph.features, directory / feat_file)
                line += f"\t{feat_file.as_posix()}"
            fh.write(line + "\n")
    return manifest


def load_graph_set(manifest, test_fraction: float = 0.1, seed: int = 0) -> GraphSet:
    manifest = Path(manifest)
    base = manifest.parent
    graphs = []
    for lineno, line in _lines(manifest):
        parts = line.split("\t")
        if len(parts) not in (3, 4):
            raise InputError(f"{manifest}:{lineno}: expected 'graph_id<TAB>edges<TAB>target[<TAB>features]'")
        try:
            target = float(parts[2])
        except ValueError:
            raise InputError(f"{manifest}:{lineno}: target {parts[2]!r} is not a number") from None
        declared, pairs = read_edges(base / parts[1])
        n = declared if declared is not None else 1 + max((max(p) for p in pairs), default=-1)
        if n == 0:
            raise InputError(f"{manifest}:{lineno}: empty graph")
        g = from_edge_list(n, pairs)
        feats = read_features(base / parts[3], n) if len(parts) == 4 else structural_features(g)
        graphs.append(DatasetBundle(g.with_features(feats), None, GRAPH_TASK, parts[0], target))
    if not graphs:
        raise InputError(f"{manifest}: no graphs listed")
    train_idx, test_idx = split_graphs(len(graphs), test_fraction, seed)
    return GraphSet(graphs, train_idx, test_idx, manifest.parent.name)


# -- generators ------------------------------------------------------------

def _sample_pairs(rng, rows: int, cols: int, p: float, diagonal: bool):
    """Independent Bernoulli(p) over a rows x cols block (minus the diagonal
    when ``diagonal``), drawn as a binomial count plus a uniform subset."""
    population = rows * cols - (rows if diagonal else 0)
    if p <= 0.0 or population == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    count = rng.binomial(population, p)
    picks = np.sort(rng.choice(population, size=count, replace=False))
    if diagonal:
        i, j = np.divmod(picks, cols - 1)
        j = j + (j >= i)
    else:
        i, j = np.divmod(picks, cols)
    return i, j


def generate_directed_sbm(spec: SbmSpec) -> DatasetBundle:
    rng = np.random.default_rng(spec.seed)
    sizes = list(spec.block_sizes)
    starts = np.concatenate([[0], np.cumsum(sizes)])
    n = int(starts[-1])
    src, dst = [], []
    for a, size_a in enumerate(sizes):
        for b, size_b in enumerate(sizes):
            i, j = _sample_pairs(rng, size_a, size_b, float(spec.probs[a, b]), diagonal=(a == b))
            src.append(i + starts[a])
            dst.append(j + starts[b])
    pairs = np.stack([np.concatenate(src), np.concatenate(dst)], axis=1)
    blocks = np.repeat(np.arange(len(sizes)), sizes)
    labels = LabelSet(np.arange(n), blocks, len(sizes))
    g = from_edge_list(n, pairs)
    return DatasetBundle(g, labels, NODE_TASK, f"sbm-{n}")


def longest_path_length(g: DirectedGraph) -> int:
    """Edges on the longest directed path; raises on cycles."""
    order = topological_order(g)
    if order is None:
        raise InputError("graph has a cycle")
    depth = np.zeros(g.n, dtype=np.int64)
    for v in order:
        for w in g.successors(v):
            depth[w] = max(depth[w], depth[v] + 1)
    return int(depth.max()) if g.n else 0


def topological_order(g: DirectedGraph) -> list[int] | None:
    """Kahn's algorithm; None if the graph is cyclic."""
    indeg = g.in_degree.copy()
    queue = [v for v in range(g.n) if indeg[v] == 0]
    order = []
    while queue:
        v = queue.pop()
        order.append(v)
        for w in g.successors(v):
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    return order if len(order) == g.n else None


def structural_features(g: DirectedGraph) -> Tensor:
    """Per-node [1, in-degree, out-degree, is-source, is-sink]."""
    ind = g.in_degree.astype(np.float64)
    outd = g.out_degree.astype(np.float64)
    return np.column_stack([np.ones(g.n), ind, outd, ind == 0, outd == 0]).astype(np.float64)


def split_graphs(count: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(count)
    n_test = max(1, int(round(count * test_fraction))) if count > 1 else 0
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def random_dag(rng: np.random.Generator, n: int, p: float) -> DirectedGraph:
    order = rng.permutation(n)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    pairs = np.stack([order[iu[keep]], order[ju[keep]]], axis=1)
    return from_edge_list(n, pairs)


def generate_dag_regression(
    count: int,
    size_range: tuple[int, int] = (4, 12),
    seed: int = 0,
    edge_prob: float | tuple[float, float] = (0.1, 0.5),
    test_fraction: float = 0.1,
) -> GraphSet:
    """Random DAGs labelled with longest-path length / (n - 1).

    Each graph takes a random node order and keeps every forward pair with
    probability ``p`` (a fixed float, or drawn per graph from a range).
    """
    lo, hi = size_range
    if lo < 2 or hi < lo:
        raise ConfigError(f"size range must satisfy 2 <= lo <= hi, got {size_range}")
    rng = np.random.default_rng(seed)
    graphs = []
    for k in range(count):
        n = int(rng.integers(lo, hi + 1))
        p = float(edge_prob) if np.isscalar(edge_prob) else float(rng.uniform(*edge_prob))
        g = random_dag(rng, n, p)
        target = longest_path_length(g) / (n - 1)
        g = g.with_features(structural_features(g))
        graphs.append(DatasetBundle(g, None, GRAPH_TASK, f"dag{k}", target))
    train_idx, test_idx = split_graphs(count, test_fraction, seed)
    return GraphSet(graphs, train_idx, test_idx, f"dag-{count}")
