import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fedravan import linalg
from fedravan.errors import DegeneracyError, NumericError, ShapeError, UndefinedRankError

from oracles import jacobi_eigenvalues, matmul_loops


def test_matmul_identity_and_hand_case():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(linalg.matmul(np.eye(2), m), m)
    assert np.array_equal(linalg.matmul(m, [[1.0], [1.0]]), [[3.0], [7.0]])


def test_matmul_matches_triple_loop(stream):
    a = stream.standard_normal((5, 7))
    b = stream.standard_normal((7, 3))
    assert np.abs(linalg.matmul(a, b) - matmul_loops(a.tolist(), b.tolist())).max() < 1e-12


def test_matmul_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        linalg.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        linalg.matmul(np.ones(3), np.ones((3, 1)))


def test_frobenius_norm():
    assert linalg.frobenius_norm([[3.0, 4.0]]) == 5.0
    assert linalg.frobenius_norm(np.zeros((3, 2))) == 0.0
    assert linalg.frobenius_norm(np.eye(7)) == pytest.approx(math.sqrt(7), abs=1e-15)


def test_svd_diagonal_and_zero():
    assert np.allclose(linalg.svd(np.diag([3.0, 2.0, 1.0])).singular_values, [3, 2, 1], atol=1e-14)
    out = linalg.svd(np.zeros((4, 3)))
    assert np.array_equal(out.singular_values, np.zeros(3))
    assert np.abs(out.u.T @ out.u - np.eye(3)).max() < 1e-12


def test_svd_hand_two_by_two():
    # M^T M = [[25, 20], [20, 25]] has eigenvalues 45 and 5
    sv = linalg.svd([[3.0, 0.0], [4.0, 5.0]]).singular_values
    assert np.allclose(sv, [3 * math.sqrt(5), math.sqrt(5)], atol=1e-13)


def test_svd_matches_jacobi_eigen_oracle(stream):
    m = stream.standard_normal((8, 8))
    expected = np.sqrt(np.clip(jacobi_eigenvalues(m.T @ m), 0, None))
    assert np.abs(linalg.svd(m).singular_values - expected).max() < 1e-8


@pytest.mark.parametrize("shape", [(7, 3), (3, 7), (6, 6), (1, 5), (5, 1)])
def test_svd_factors(shape, stream):
    m = stream.standard_normal(shape)
    u, s, vt = linalg.svd(m)
    k = min(shape)
    assert u.shape == (shape[0], k) and vt.shape == (k, shape[1])
    assert np.abs(u * s @ vt - m).max() < 1e-12
    assert np.abs(u.T @ u - np.eye(k)).max() < 1e-12
    assert np.abs(vt @ vt.T - np.eye(k)).max() < 1e-12
    assert np.all(np.diff(s) <= 0)


def test_svd_rank_deficient_keeps_orthonormal_u(stream):
    m = stream.standard_normal((6, 2)) @ stream.standard_normal((2, 5))
    u, s, vt = linalg.svd(m)
    assert s[2:].max() < 1e-12 * s[0]
    assert np.abs(u.T @ u - np.eye(5)).max() < 1e-10
    assert np.abs(u * s @ vt - m).max() < 1e-12


def test_svd_sweep_cap_raises(stream):
    with pytest.raises(NumericError) as info:
        linalg.svd(stream.standard_normal((6, 6)), max_sweeps=1)
    assert info.value.iterations == 1


def test_svd_rejects_bad_input():
    with pytest.raises(ShapeError):
        linalg.svd(np.ones(4))
    with pytest.raises(ValueError):
        linalg.svd([[1.0, np.nan]])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 7), st.integers(1, 7)),
              elements=st.floats(-100, 100, allow_nan=False, width=64)))
def test_svd_reconstructs_arbitrary_matrices(m):
    u, s, vt = linalg.svd(m)
    scale = max(1.0, np.abs(m).max())
    assert np.abs(u * s @ vt - m).max() <= 1e-10 * scale
    assert np.all(s >= 0) and np.all(np.diff(s) <= 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_spectrum_invariant_under_orthogonal_change_of_basis(seed):
    g = np.random.default_rng(seed)
    m = g.standard_normal((6, 6))
    q1 = linalg.gram_schmidt_columns(g.standard_normal((6, 6)))
    q2 = linalg.gram_schmidt_columns(g.standard_normal((6, 6)))
    a = linalg.svd(m).singular_values
    b = linalg.svd(q1 @ m @ q2.T).singular_values
    assert np.abs(a - b).max() < 1e-9
    ea = linalg.effective_rank(a)
    assert ea == pytest.approx(linalg.effective_rank(b), abs=1e-9)
    assert 1.0 <= ea <= 6.0


def test_numerical_rank(stream):
    m = stream.standard_normal((10, 3)) @ stream.standard_normal((3, 8))
    assert linalg.numerical_rank(m) == 3
    assert linalg.numerical_rank(np.zeros((3, 3))) == 0


def test_gram_schmidt_hand_case():
    q = linalg.gram_schmidt_columns([[1.0, 1.0], [0.0, 1.0]])
    assert np.abs(q - np.eye(2)).max() < 1e-15


def test_gram_schmidt_fixed_point(stream):
    q0 = linalg.gram_schmidt_columns(stream.standard_normal((9, 4)))
    assert np.abs(linalg.gram_schmidt_columns(q0) - q0).max() < 1e-12


def test_gram_schmidt_orthonormal_and_span_preserving():
    m = linalg.make_stream(7, "gs").standard_normal((64, 8))
    q = linalg.gram_schmidt_columns(m)
    assert np.abs(q.T @ q - np.eye(8)).max() < 1e-10
    # first k columns of q span the first k columns of m: q^T m is upper triangular
    r = q.T @ m
    assert np.abs(np.tril(r, -1)).max() < 1e-10


def test_gram_schmidt_degenerate_column():
    with pytest.raises(DegeneracyError) as info:
        linalg.gram_schmidt_columns([[1.0, 2.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    assert info.value.column == 1
    with pytest.raises(ShapeError):
        linalg.gram_schmidt_columns(np.ones((2, 3)))


def test_effective_rank_examples():
    assert linalg.effective_rank([1.0, 1.0]) == pytest.approx(2.0, abs=1e-15)
    assert linalg.effective_rank([4.0, 0.0, 0.0], linalg.ThresholdFraction(0.01)) == 1
    assert linalg.effective_rank([5.0, 3.0, 1.0, 0.1], linalg.ThresholdFraction(0.1)) == 3
    # p = (3/4, 1/4): exp(-(3/4) ln(3/4) - (1/4) ln(1/4)) frozen from a hand calculation
    assert linalg.effective_rank([3.0, 1.0]) == pytest.approx(1.7547653506033232, abs=1e-14)
    assert linalg.effective_rank([2.0, 0.0, 0.0]) == 1.0


def test_effective_rank_errors():
    with pytest.raises(UndefinedRankError):
        linalg.effective_rank([0.0, 0.0])
    with pytest.raises(ValueError):
        linalg.effective_rank([1.0, 2.0])
    with pytest.raises(ValueError):
        linalg.effective_rank([1.0, -0.5])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1e3, allow_nan=False), min_size=1, max_size=12))
def test_effective_rank_bounds(values):
    sv = np.sort(np.array(values))[::-1]
    if sv.sum() == 0:
        return
    n = len(sv)
    assert 1.0 <= linalg.effective_rank(sv) <= n
    assert 1 <= linalg.effective_rank(sv, linalg.ThresholdFraction(0.01)) <= n


def test_random_normal_matrix():
    a = linalg.random_normal_matrix(4, 3, 1.0, linalg.make_stream(3, "m"))
    b = linalg.random_normal_matrix(4, 3, 1.0, linalg.make_stream(3, "m"))
    c = linalg.random_normal_matrix(4, 3, 2.0, linalg.make_stream(3, "m"))
    assert np.array_equal(a, b)
    assert np.array_equal(c, 2.0 * a)
    big = linalg.random_normal_matrix(1000, 1000, 1.0, linalg.make_stream(0, "lln"))
    assert abs(big.mean()) < 0.01 and abs(big.std() - 1.0) < 0.01
    with pytest.raises(ValueError):
        linalg.random_normal_matrix(2, 2, 0.0, linalg.make_stream(0))


def test_streams_are_keyed_by_path():
    a = linalg.make_stream(5, "client", 3, 1).random(4)
    b = linalg.make_stream(5, "client", 3, 1).random(4)
    c = linalg.make_stream(5, "client", 3, 2).random(4)
    d = linalg.make_stream(6, "client", 3, 1).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


def test_svd_completes_large_null_space(stream):
    m = stream.standard_normal((64, 4)) @ stream.standard_normal((4, 64))
    u, s, vt = linalg.svd(m)
    assert np.abs(u.T @ u - np.eye(64)).max() < 1e-10
    assert np.abs(u * s @ vt - m).max() < 1e-10


def test_svd_tiny_entries_do_not_underflow():
    m = np.full((3, 4), 1.6594712e-147)
    m[0, 0] = 0.0
    u, s, vt = linalg.svd(m)
    assert np.abs(u * s @ vt - m).max() <= 1e-12 * 1.6594712e-147
    assert linalg.svd(1e150 * np.eye(3)).singular_values[0] == 1e150
