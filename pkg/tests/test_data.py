import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from agnn.data import (
    GRAPH_TASK,
    SbmSpec,
    generate_dag_regression,
    generate_directed_sbm,
    load_edge_list_dataset,
    load_graph_set,
    longest_path_length,
    random_dag,
    read_edges,
    read_labels,
    structural_features,
    topological_order,
    write_features,
    write_graph_set,
    write_labels,
)
from agnn.errors import ConfigError, InputError
from agnn.graph import from_edge_list
from agnn.loss import LabelSet


def _write(path, text):
    path.write_text(text)
    return path


def test_two_line_path_file(tmp_path):
    b = load_edge_list_dataset(_write(tmp_path / "e.txt", "0\t1\n1\t2\n"))
    assert b.graph.n == 3
    assert b.graph.A.to_dense().tolist() == [[0, 1, 0], [0, 0, 1], [0, 0, 0]]
    assert b.labels is None
    assert np.array_equal(b.feature_matrix(), np.eye(3))


def test_header_allows_isolated_tail(tmp_path):
    b = load_edge_list_dataset(_write(tmp_path / "e.txt", "#nodes 5\n0\t1\n"))
    assert b.graph.n == 5
    with pytest.raises(InputError):
        load_edge_list_dataset(_write(tmp_path / "f.txt", "#nodes 2\n0\t4\n"))


def test_malformed_line_reports_line_number(tmp_path):
    path = _write(tmp_path / "e.txt", "0\t1\n1\tx\n")
    with pytest.raises(InputError, match=r"e\.txt:2"):
        read_edges(path)
    with pytest.raises(InputError, match=r":3"):
        read_edges(_write(tmp_path / "g.txt", "0 1\n\n1 2 3\n"))


def test_label_files(tmp_path):
    with pytest.raises(InputError, match="empty"):
        read_labels(_write(tmp_path / "l.txt", ""), 3)
    with pytest.raises(InputError):
        read_labels(_write(tmp_path / "l2.txt", "0\t1\n7\t0\n"), 3)
    lab = read_labels(_write(tmp_path / "l3.txt", "2\t1\n0\t0\n"), 3)
    assert lab.indices.tolist() == [2, 0] and lab.num_classes == 2


def test_features_and_labels_roundtrip(tmp_path):
    x = np.random.default_rng(0).normal(size=(4, 3))
    write_features(x, tmp_path / "x.txt")
    write_labels(LabelSet(np.arange(4), [1, 0, 2, 1], 3), tmp_path / "y.txt")
    _write(tmp_path / "e.txt", "0\t1\n2\t3\n")
    b = load_edge_list_dataset(tmp_path / "e.txt", tmp_path / "x.txt", tmp_path / "y.txt")
    assert np.array_equal(b.feature_matrix(), x)
    assert b.labels.labels.tolist() == [1, 0, 2, 1]


def test_missing_feature_row(tmp_path):
    _write(tmp_path / "e.txt", "0\t1\n1\t2\n")
    _write(tmp_path / "x.txt", "0\t1.0\n1\t2.0\n")
    with pytest.raises(InputError, match="node 2"):
        load_edge_list_dataset(tmp_path / "e.txt", tmp_path / "x.txt")


def test_sbm_zero_probabilities():
    b = generate_directed_sbm(SbmSpec([10, 15], np.zeros((2, 2))))
    assert b.graph.A.nnz == 0 and b.graph.n == 25
    assert b.labels.labels.tolist() == [0] * 10 + [1] * 15


def test_sbm_one_way_block():
    b = generate_directed_sbm(SbmSpec([100, 100], [[0.0, 0.5], [0.0, 0.0]], seed=7))
    A = b.graph.A.to_dense()
    assert A[:100, :100].sum() == 0 and A[100:, :].sum() == 0
    sigma = np.sqrt(10000 * 0.25)
    assert abs(A[:100, 100:].sum() - 5000) <= 4 * sigma


def test_sbm_full_probability_no_self_loops():
    b = generate_directed_sbm(SbmSpec([6], [[1.0]]))
    assert b.graph.A.to_dense().tolist() == (np.ones((6, 6)) - np.eye(6)).tolist()


def test_sbm_deterministic():
    spec = SbmSpec([30, 40], [[0.1, 0.2], [0.05, 0.3]], seed=3)
    a, b = generate_directed_sbm(spec), generate_directed_sbm(spec)
    assert a.graph.A == b.graph.A
    assert not generate_directed_sbm(SbmSpec([30, 40], spec.probs, seed=4)).graph.A == a.graph.A


def test_sbm_block_counts_chi_square():
    sizes = [5000, 5000]
    probs = np.array([[0.002, 0.004], [0.001, 0.003]])
    b = generate_directed_sbm(SbmSpec(sizes, probs, seed=11))
    g = b.graph
    blk = b.labels.labels
    e = np.array(g.edges)
    src, dst = e[:, 0], e[:, 1]
    assert np.all(src != dst)
    observed = np.zeros((2, 2))
    np.add.at(observed, (blk[src], blk[dst]), 1)
    pairs = np.array([[s * t - (s if a == c else 0) for c, t in enumerate(sizes)] for a, s in enumerate(sizes)])
    expected = pairs * probs
    chi2 = float((((observed - expected) ** 2) / (expected * (1 - probs))).sum())
    assert stats.chi2.sf(chi2, df=4) > 1e-3


def test_sbm_spec_validation():
    with pytest.raises(ConfigError):
        SbmSpec([5, 5], [[0.1]])
    with pytest.raises(ConfigError):
        SbmSpec([5], [[1.5]])


def test_longest_path_examples():
    chain = from_edge_list(5, [(i, i + 1) for i in range(4)])
    assert longest_path_length(chain) / 4 == 1.0
    assert longest_path_length(from_edge_list(4, [])) == 0
    with pytest.raises(InputError):
        longest_path_length(from_edge_list(3, [(0, 1), (1, 2), (2, 0)]))
    assert topological_order(from_edge_list(2, [(0, 1), (1, 0)])) is None


def _brute_longest(n, edges):
    succ = {v: [t for s, t in edges if s == v] for v in range(n)}

    def dfs(v):
        return max((1 + dfs(w) for w in succ[v]), default=0)

    return max(dfs(v) for v in range(n))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), p=st.floats(0.0, 1.0))
def test_longest_path_against_dfs(seed, p):
    g = random_dag(np.random.default_rng(seed), 8, p)
    assert topological_order(g) is not None
    assert longest_path_length(g) == _brute_longest(8, list(g.edges))


def test_structural_features():
    g = from_edge_list(3, [(0, 1), (0, 2)])
    assert structural_features(g).tolist() == [
        [1, 0, 2, 1, 0], [1, 1, 0, 0, 1], [1, 1, 0, 0, 1],
    ]


def test_dag_generator():
    gs = generate_dag_regression(50, (4, 12), seed=2)
    assert len(gs) == 50
    assert len(gs.test_idx) == 5 and len(gs.train_idx) == 45
    assert set(gs.train_idx.tolist()).isdisjoint(gs.test_idx.tolist())
    for b in gs.graphs:
        assert b.task == GRAPH_TASK
        assert 4 <= b.graph.n <= 12
        assert topological_order(b.graph) is not None
        assert b.target == longest_path_length(b.graph) / (b.graph.n - 1)
        assert 0.0 <= b.target <= 1.0
    again = generate_dag_regression(50, (4, 12), seed=2)
    assert np.array_equal(gs.targets, again.targets)
    with pytest.raises(ConfigError):
        generate_dag_regression(3, (1, 4))


def test_graph_set_manifest_roundtrip(tmp_path):
    gs = generate_dag_regression(12, (3, 6), seed=5)
    manifest = write_graph_set(gs, tmp_path)
    back = load_graph_set(manifest, seed=5)
    assert np.array_equal(back.targets, gs.targets)
    for a, b in zip(gs.graphs, back.graphs):
        assert a.graph.n == b.graph.n
        assert a.graph.A == b.graph.A
        assert np.array_equal(a.graph.features, b.graph.features)
    assert np.array_equal(back.test_idx, gs.test_idx)


def test_manifest_without_features_uses_structure(tmp_path):
    (tmp_path / "a.edges").write_text("0\t1\n1\t2\n")
    (tmp_path / "m.tsv").write_text("g0\ta.edges\t1.0\ng1\ta.edges\t1.0\n")
    gs = load_graph_set(tmp_path / "m.tsv")
    assert np.array_equal(gs.graphs[0].graph.features, structural_features(gs.graphs[0].graph))
    (tmp_path / "bad.tsv").write_text("g0\ta.edges\tnope\n")
    with pytest.raises(InputError, match=":1"):
        load_graph_set(tmp_path / "bad.tsv")


def test_brute_force_oracle_sanity():
    # the DFS reference itself, on a hand-built diamond with a tail
    edges = [(0, 1), (0, 2), (1, 3), (2, 3), (3, 4)]
    assert _brute_longest(5, edges) == 3
    assert all(_brute_longest(3, list(e)) <= 2 for e in itertools.combinations([(0, 1), (1, 2), (0, 2)], 2))
