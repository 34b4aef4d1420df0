import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from agnn import linalg
from agnn.errors import ContractError, DimensionError, NonFiniteError
from agnn.linalg import SparseMatrix


def test_matmul_identity_and_hand_case():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(linalg.matmul(linalg.eye(2), M), M)
    assert np.array_equal(linalg.matmul(M, np.array([[0.0], [1.0]])), [[2.0], [4.0]])
    assert np.array_equal(linalg.matmul(linalg.zeros(2, 3), linalg.ones(3, 1)), linalg.zeros(2, 1))


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        linalg.matmul(linalg.zeros(2, 3), linalg.zeros(2, 3))


def test_spmm_trivial_cases(rng):
    M = rng.normal(size=(4, 3))
    assert np.array_equal(linalg.spmm(SparseMatrix.from_dense(np.eye(4)), M), M)
    empty = SparseMatrix.from_coo(4, 4, [], [], [])
    assert np.array_equal(linalg.spmm(empty, M), np.zeros((4, 3)))
    with pytest.raises(DimensionError):
        linalg.spmm(empty, np.zeros((3, 3)))


def test_spmm_matches_densified_5x5(rng):
    dense = rng.normal(size=(5, 5)) * (rng.random((5, 5)) < 0.4)
    s = SparseMatrix.from_dense(dense)
    d = rng.normal(size=(5, 3))
    assert np.abs(linalg.spmm(s, d) - s.to_dense() @ d).max() <= 1e-12


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 50), m=st.integers(1, 8), seed=st.integers(0, 2**31), density=st.floats(0.0, 1.0))
def test_spmm_densify_property(n, m, seed, density):
    r = np.random.default_rng(seed)
    dense = r.uniform(-1, 1, (n, n)) * (r.random((n, n)) < density)
    s = SparseMatrix.from_dense(dense)
    d = r.uniform(-1, 1, (n, m))
    assert np.abs(linalg.spmm(s, d) - s.to_dense() @ d).max() <= 1e-12


def test_csr_invariants_enforced():
    with pytest.raises(ContractError):
        SparseMatrix(2, 2, [0, 2, 1], [0, 1], [1.0, 1.0])
    with pytest.raises(ContractError):
        SparseMatrix(1, 3, [0, 2], [2, 1], [1.0, 1.0])
    with pytest.raises(ContractError):
        SparseMatrix(1, 2, [0, 1], [0], [0.0])
    with pytest.raises(ContractError):
        SparseMatrix(1, 2, [0, 1], [5], [1.0])


def test_from_coo_deduplicates_and_sorts():
    s = SparseMatrix.from_coo(2, 3, [1, 0, 1, 0], [2, 1, 0, 1], [5.0, 1.0, 2.0, 3.0])
    assert s.indptr.tolist() == [0, 1, 3]
    assert s.indices.tolist() == [1, 0, 2]
    assert s.data.tolist() == [3.0, 2.0, 5.0]


def test_transpose_roundtrip(rng):
    dense = rng.normal(size=(6, 4)) * (rng.random((6, 4)) < 0.5)
    s = SparseMatrix.from_dense(dense)
    assert np.array_equal(s.T.to_dense(), dense.T)
    assert s.T.T == s


def test_elementwise_examples():
    assert linalg.elementwise("relu", np.array([[-1.0, 0.0, 2.0]])).tolist() == [[0.0, 0.0, 2.0]]
    assert linalg.elementwise("sigmoid", np.zeros((1, 1)))[0, 0] == 0.5
    assert linalg.elementwise("scale", np.ones((1, 2)), scale=3.0).tolist() == [[3.0, 3.0]]
    with pytest.raises(DimensionError):
        linalg.elementwise("add", np.ones((1, 2)), np.ones((2, 1)))
    with pytest.raises(ContractError):
        linalg.elementwise("tanh", np.ones((1, 1)))


def test_softplus_large_argument_against_extended_precision():
    mpmath.mp.dps = 50
    for x in (50.0, 700.0, -50.0, 1e-3, 0.0):
        want = float(mpmath.log(1 + mpmath.exp(mpmath.mpf(x))))
        got = linalg.elementwise("softplus", np.array([[x]]))[0, 0]
        assert abs(got - want) <= 1e-12 * max(1.0, abs(want))
    assert abs(linalg.elementwise("softplus", np.array([[50.0]]))[0, 0] - 50.0) <= 1e-12


def test_sigmoid_no_overflow():
    out = linalg.elementwise("sigmoid", np.array([[-1000.0, 1000.0]]))
    assert out.tolist() == [[0.0, 1.0]]


def test_non_finite_is_an_error():
    with pytest.raises(NonFiniteError):
        linalg.elementwise("exp", np.array([[1000.0]]))


def test_maximum_tie_takes_first():
    a = np.array([[1.0, 2.0]])
    b = np.array([[1.0, 3.0]])
    assert linalg.elementwise("maximum", a, b).tolist() == [[1.0, 3.0]]


def test_row_softmax_examples():
    assert np.allclose(linalg.row_softmax(np.array([[0.0, 0.0]])), [[0.5, 0.5]], atol=1e-15)
    assert np.allclose(linalg.row_softmax(np.array([[1000.0, 1000.0]])), [[0.5, 0.5]], atol=1e-15)
    out = linalg.row_softmax(np.array([[0.0, np.log(3.0)]]))
    assert np.abs(out - [[0.25, 0.75]]).max() <= 1e-12


@settings(max_examples=50, deadline=None)
@given(x=arrays(np.float64, (4, 5), elements=st.floats(-30, 30)),
       c=arrays(np.float64, (4, 1), elements=st.floats(-100, 100)))
def test_row_softmax_shift_invariance(x, c):
    a = linalg.row_softmax(x)
    assert np.abs(a.sum(axis=1) - 1.0).max() <= 1e-12
    assert np.abs(linalg.row_softmax(x + c) - a).max() <= 1e-12


@settings(max_examples=30, deadline=None)
@given(x=arrays(np.float64, (3, 3), elements=st.floats(-20, 20)),
       y=arrays(np.float64, (3, 3), elements=st.floats(-20, 20)))
def test_elementwise_ops_are_pure(x, y):
    for op in ("relu", "sigmoid", "softplus"):
        assert np.array_equal(linalg.elementwise(op, x), linalg.elementwise(op, x.copy()))
    for op in ("add", "hadamard", "maximum"):
        assert np.array_equal(linalg.elementwise(op, x, y), linalg.elementwise(op, x.copy(), y.copy()))


def test_row_bias_is_the_only_broadcast():
    assert linalg.add_row_bias(np.zeros((3, 2)), np.array([[1.0, 2.0]])).tolist() == [[1, 2]] * 3
    with pytest.raises(DimensionError):
        linalg.add_row_bias(np.zeros((3, 2)), np.zeros((1, 3)))
