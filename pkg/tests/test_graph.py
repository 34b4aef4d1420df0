import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agnn.errors import InputError
from agnn.graph import build_operators, from_edge_list, one_hot_features, permute, symmetrize

from conftest import random_digraph, random_symmetric_graph


def test_single_edge_degrees():
    g = from_edge_list(2, [(0, 1)])
    assert g.out_degree.tolist() == [1, 0]
    assert g.in_degree.tolist() == [0, 1]


def test_toy_graph_source_and_sink():
    w, v, q, p = range(4)
    g = from_edge_list(4, [(w, v), (w, q), (v, q), (q, p), (v, p)])
    assert g.in_degree[w] == 0
    assert g.out_degree[p] == 0
    assert sorted(g.predecessors(q).tolist()) == [w, v]
    assert sorted(g.successors(v).tolist()) == [q, p]


def test_duplicates_collapse_and_bad_input():
    g = from_edge_list(3, [(0, 1), (0, 1), (1, 2)])
    assert g.num_edges == 2
    assert g.A.data.tolist() == [1.0, 1.0]
    with pytest.raises(InputError):
        from_edge_list(2, [(0, 2)])
    with pytest.raises(InputError):
        from_edge_list(0, [])


def test_degree_definitions(rng):
    g = random_digraph(rng, 15, 0.3, self_loops=True)
    dense = g.A.to_dense()
    assert np.array_equal(g.out_degree, dense.sum(axis=1))
    assert np.array_equal(g.in_degree, dense.sum(axis=0))


def test_one_hot_features():
    assert np.array_equal(one_hot_features(from_edge_list(3, [])), np.eye(3))
    assert one_hot_features(from_edge_list(1, [])).tolist() == [[1.0]]
    assert np.all(one_hot_features(from_edge_list(5, [(0, 1)])).sum(axis=1) == 1.0)


def test_two_node_operator_by_hand():
    ops = build_operators(from_edge_list(2, [(0, 1)]))
    r2 = 1 / np.sqrt(2)
    expected = np.array([[r2, 0.5], [0.0, r2]])
    assert np.abs(ops.A_tilde.to_dense() - expected).max() <= 1e-12
    assert np.array_equal(ops.A_hat.to_dense(), expected.T)


def test_empty_graph_operators_are_identity():
    ops = build_operators(from_edge_list(4, []))
    assert np.array_equal(ops.A_tilde.to_dense(), np.eye(4))
    assert np.array_equal(ops.A_hat.to_dense(), np.eye(4))


def test_input_self_loop_merged_not_doubled():
    ops = build_operators(from_edge_list(2, [(0, 0), (0, 1)]))
    r2 = 1 / np.sqrt(2)
    assert np.abs(ops.A_tilde.to_dense() - [[r2, 0.5], [0.0, r2]]).max() <= 1e-12


def _dense_reference(g):
    B = np.minimum(g.A.to_dense() + np.eye(g.n), 1.0)
    o = B.sum(axis=1)
    p = B.sum(axis=0)
    tilde = np.diag(o ** -0.5) @ B @ np.diag(p ** -0.5)
    hat = np.diag(p ** -0.5) @ B.T @ np.diag(o ** -0.5)
    return tilde, hat


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 30), p=st.floats(0, 0.6), seed=st.integers(0, 2**31), loops=st.booleans())
def test_operator_properties(n, p, seed, loops):
    g = random_digraph(np.random.default_rng(seed), n, p, self_loops=loops)
    ops = build_operators(g)
    # incoming operator is the exact transpose of the outgoing one
    assert ops.A_hat == ops.A_tilde.T
    tilde, hat = _dense_reference(g)
    assert np.abs(ops.A_tilde.to_dense() - tilde).max() <= 1e-12
    assert np.abs(ops.A_hat.to_dense() - hat).max() <= 1e-12
    data = ops.A_tilde.data
    assert np.all((data > 0) & (data <= 1))
    assert np.all(np.diff(ops.A_tilde.indptr) >= 1)
    B = np.minimum(g.A.to_dense() + np.eye(n), 1.0)
    row_sums = ops.A_tilde.to_dense().sum(axis=1)
    assert np.all(row_sums <= np.sqrt(B.sum(axis=1)) + 1e-12)


def test_symmetric_input_gives_symmetric_operator(rng):
    for _ in range(10):
        g = random_symmetric_graph(rng, 20)
        ops = build_operators(g)
        dense = ops.A_tilde.to_dense()
        assert np.abs(dense - dense.T).max() <= 1e-12
        assert np.abs(ops.A_hat.to_dense() - dense).max() <= 1e-12


def test_symmetrize(rng):
    assert set(symmetrize(from_edge_list(2, [(0, 1)])).edges) == {(0, 1), (1, 0)}
    s = random_symmetric_graph(rng, 12)
    assert symmetrize(s).edges == s.edges
    g = random_digraph(rng, 20, 0.2)
    gs = symmetrize(g)
    assert gs.num_edges >= g.num_edges
    dense = build_operators(gs).A_tilde.to_dense()
    assert np.abs(dense - dense.T).max() <= 1e-12


def test_relabeling_permutes_operator(rng):
    g = random_digraph(rng, 15, 0.25)
    perm = rng.permutation(15)
    P = np.zeros((15, 15))
    P[perm, np.arange(15)] = 1.0
    a = build_operators(g).A_tilde.to_dense()
    b = build_operators(permute(g, perm)).A_tilde.to_dense()
    assert np.abs(b - P @ a @ P.T).max() <= 1e-12
