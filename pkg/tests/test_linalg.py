import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from whitenrec.exceptions import DegenerateInputError, NumericError, ShapeError
from whitenrec.linalg import as_matrix, cholesky, covariance, jacobi_eigh, sym_eigendecompose

SOLVERS = [sym_eigendecompose, jacobi_eigh]


def _spd(d, seed):
    A = np.random.default_rng(seed).standard_normal((d, d + 3))
    return A @ A.T / d + 0.1 * np.eye(d)


@pytest.mark.parametrize("solve", SOLVERS)
def test_identity_eigenvalues(solve):
    vals, _ = solve(np.eye(3))
    np.testing.assert_array_equal(vals, [1.0, 1.0, 1.0])


@pytest.mark.parametrize("solve", SOLVERS)
def test_diagonal_eigenpairs(solve):
    vals, vecs = solve(np.diag([4.0, 1.0]))
    np.testing.assert_allclose(vals, [4.0, 1.0])
    np.testing.assert_allclose(vecs, np.eye(2), atol=1e-15)


@pytest.mark.parametrize("solve", SOLVERS)
def test_two_by_two_closed_form(solve):
    vals, vecs = solve(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(vals, [3.0, 1.0], atol=1e-14)
    r = 1 / np.sqrt(2)
    # sign convention: largest-magnitude entry positive (first on ties)
    np.testing.assert_allclose(np.abs(vecs[:, 0]), [r, r], atol=1e-14)
    np.testing.assert_allclose(np.abs(vecs[:, 1]), [r, r], atol=1e-14)
    assert vecs[0, 1] * vecs[1, 1] < 0


@pytest.mark.parametrize("solve", SOLVERS)
@pytest.mark.parametrize("seed", range(4))
def test_reconstruction_and_orthonormality(solve, seed):
    A = _spd(7, seed)
    vals, D = solve(A)
    assert np.all(np.diff(vals) <= 0)
    assert np.max(np.abs(D.T @ D - np.eye(7))) <= 1e-9
    assert np.max(np.abs(D @ np.diag(vals) @ D.T - A)) <= 1e-8 * np.max(np.abs(A))


def test_jacobi_agrees_with_lapack():
    A = _spd(12, 9)
    a, b = sym_eigendecompose(A), jacobi_eigh(A)
    np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, rtol=1e-11)
    np.testing.assert_allclose(a.eigenvectors, b.eigenvectors, atol=1e-8)


def test_jacobi_non_convergence_reports_residual():
    with pytest.raises(NumericError, match="residual"):
        jacobi_eigh(_spd(6, 1), max_sweeps=1, tol=1e-300)


@pytest.mark.parametrize("bad", [np.ones((2, 3)), np.array([[1.0, 2.0], [0.0, 1.0]])])
def test_eig_rejects_non_symmetric(bad):
    with pytest.raises(ShapeError):
        sym_eigendecompose(bad)


def test_as_matrix_rejects_nan_and_empty():
    with pytest.raises(NumericError):
        as_matrix([[1.0, np.nan]])
    with pytest.raises(ShapeError):
        as_matrix(np.zeros((0, 3)))


def test_cholesky_examples():
    np.testing.assert_array_equal(cholesky(np.eye(2)), np.eye(2))
    np.testing.assert_array_equal(cholesky(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    L = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
    np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], atol=1e-15)


def test_cholesky_reports_pivot():
    A = np.array([[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(NumericError, match="pivot 1"):
        cholesky(A)


def test_covariance_examples():
    X = np.array([[1.0, 1.0], [-1.0, -1.0]])
    np.testing.assert_array_equal(covariance(X), [[1.0, 1.0], [1.0, 1.0]])
    np.testing.assert_array_equal(covariance(np.tile([[3.0, -2.0]], (5, 1))), np.zeros((2, 2)))
    with pytest.raises(DegenerateInputError):
        covariance(np.ones((1, 3)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 5)),
              elements=st.floats(-1e3, 1e3)))
def test_covariance_properties(X):
    C0, C1 = covariance(X, 0.0), covariance(X, 0.5)
    np.testing.assert_array_equal(C0, C0.T)
    np.testing.assert_allclose(C1 - C0, 0.5 * np.eye(X.shape[1]), atol=1e-9 * (1 + np.abs(C0).max()))
    assert np.all(np.linalg.eigvalsh(C0) >= -1e-9 * (1 + np.abs(C0).max()))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10_000))
def test_cholesky_reconstructs(d, seed):
    A = _spd(d, seed)
    L = cholesky(A)
    assert np.all(np.triu(L, 1) == 0) and np.all(np.diag(L) > 0)
    np.testing.assert_allclose(L @ L.T, A, atol=1e-12 * np.abs(A).max())
