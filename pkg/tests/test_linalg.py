import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tracereg.linalg import (
    COMMUTATION_MATERIALIZE_LIMIT, apply_commutation, commutation_matrix, commutation_permutation,
    devectorize, kronecker, nuclear_norm, pseudo_inverse, spectral_norm, truncated_svd, vectorize,
)

dims = st.integers(1, 6)
finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def mat(r, c):
    return arrays(np.float64, (r, c), elements=finite)


def test_vectorize_is_column_stacking():
    M = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    assert vectorize(M).tolist() == [1, 4, 2, 5, 3, 6]
    np.testing.assert_array_equal(devectorize(vectorize(M), 2, 3), M)


def test_devectorize_rejects_wrong_length():
    with pytest.raises(ValueError):
        devectorize(np.zeros(5), 2, 3)


@settings(max_examples=50, deadline=None)
@given(st.data(), dims, dims, dims, dims)
def test_vec_of_triple_product(data, m, k, l, q):
    A = data.draw(mat(m, k))
    B = data.draw(mat(k, l))
    C = data.draw(mat(l, q))
    lhs = vectorize(A @ B @ C)
    rhs = kronecker(C.T, A) @ vectorize(B)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9 * (1 + np.abs(lhs).max()))


@settings(max_examples=50, deadline=None)
@given(st.data(), dims, dims)
def test_commutation_transposes(data, m, n):
    A = data.draw(mat(m, n))
    K = commutation_matrix(m, n)
    np.testing.assert_array_equal(K @ vectorize(A), vectorize(A.T))
    np.testing.assert_array_equal(vectorize(A)[commutation_permutation(m, n)], vectorize(A.T))
    # K_{m,n}^T = K_{n,m} = K_{m,n}^-1
    np.testing.assert_array_equal(K.T, commutation_matrix(n, m))
    np.testing.assert_array_equal(K @ commutation_matrix(n, m), np.eye(m * n))


@settings(max_examples=30, deadline=None)
@given(st.data(), dims, dims, dims)
def test_apply_commutation_matches_matrix(data, m, n, c):
    M = data.draw(mat(m * n, c))
    K = commutation_matrix(m, n)
    np.testing.assert_array_equal(apply_commutation(m, n, M), K @ M)
    R = data.draw(mat(c, m * n))
    np.testing.assert_array_equal(apply_commutation(m, n, R, side="right"), R @ K)


def test_apply_commutation_bad_side():
    with pytest.raises(ValueError):
        apply_commutation(2, 2, np.eye(4), side="middle")


def test_commutation_materialization_cap():
    with pytest.raises(ValueError):
        commutation_matrix(101, 100)
    assert 101 * 100 > COMMUTATION_MATERIALIZE_LIMIT


@settings(max_examples=40, deadline=None)
@given(st.data(), dims, dims, dims, dims, dims, dims)
def test_mixed_product(data, a, b, c, d, e, f):
    A, C = data.draw(mat(a, b)), data.draw(mat(b, c))
    B, D = data.draw(mat(d, e)), data.draw(mat(e, f))
    lhs = kronecker(A, B) @ kronecker(C, D)
    rhs = kronecker(A @ C, B @ D)
    np.testing.assert_allclose(lhs, rhs, atol=1e-8 * (1 + np.abs(rhs).max()))


def test_kronecker_block_layout():
    A = np.array([[1.0, 2.0]])
    B = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_array_equal(kronecker(A, B), np.hstack([B, 2 * B]))


def test_truncated_svd_rank_and_reconstruction():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((5, 2)) @ rng.standard_normal((2, 4))
    t = truncated_svd(M, 1e-10)
    assert t.rank == 2
    np.testing.assert_allclose(t.reconstruct(), M, atol=1e-12)
    assert np.all(np.diff(t.singular_values) <= 0)


def test_truncated_svd_zero_matrix():
    t = truncated_svd(np.zeros((3, 4)))
    assert t.rank == 0
    assert t.left_vectors.shape == (3, 0) and t.right_vectors.shape == (4, 0)


def test_truncated_svd_rejects_bad_tolerance():
    with pytest.raises(ValueError):
        truncated_svd(np.eye(2), 1.5)


@settings(max_examples=40, deadline=None)
@given(st.data(), dims, dims, st.integers(0, 4))
def test_pseudo_inverse_penrose_conditions(data, m, n, r):
    r = min(r, m, n)
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    M = rng.standard_normal((m, r)) @ rng.standard_normal((r, n))
    P = pseudo_inverse(M, 1e-10)
    tol = 1e-8 * (1 + np.abs(M).max()) * (1 + np.abs(P).max())
    np.testing.assert_allclose(M @ P @ M, M, atol=tol)
    np.testing.assert_allclose(P @ M @ P, P, atol=tol)
    np.testing.assert_allclose((M @ P).T, M @ P, atol=tol)
    np.testing.assert_allclose((P @ M).T, P @ M, atol=tol)


def test_pseudo_inverse_of_invertible_is_inverse():
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    np.testing.assert_allclose(pseudo_inverse(A), np.linalg.inv(A), atol=1e-14)


def test_norms():
    M = np.diag([3.0, 1.0])
    assert spectral_norm(M) == pytest.approx(3.0)
    assert nuclear_norm(M) == pytest.approx(4.0)
    assert spectral_norm(np.zeros((0, 0))) == 0.0
