"""Dense symmetric linear algebra used by the whitening and diagnostics code.

Data matrices follow the scikit-learn orientation: one row per sample
(item), one column per feature.  All arithmetic is float64.
"""
from typing import NamedTuple

import numpy as np

from .exceptions import DegenerateInputError, NumericError, ShapeError

SYMMETRY_TOL = 1e-9


class EigenResult(NamedTuple):
    """Eigenvalues sorted descending; ``eigenvectors[:, i]`` pairs with ``eigenvalues[i]``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def as_matrix(A, name="A"):
    """Return ``A`` as a finite, non-empty 2-D float64 array."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NumericError(f"{name} contains NaN or Inf entries")
    return A


def _check_symmetric(A, name="A"):
    A = as_matrix(A, name)
    if A.shape[0] != A.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {A.shape}")
    asym = np.max(np.abs(A - A.T))
    if asym > SYMMETRY_TOL:
        raise ShapeError(f"{name} is not symmetric (max asymmetry {asym:.3e})")
    return A


def _fix_signs(vectors):
    # largest-magnitude component of every column made positive
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _sorted_result(values, vectors):
    order = np.argsort(-values, kind="stable")
    return EigenResult(values[order], _fix_signs(vectors[:, order]))


def sym_eigendecompose(A):
    """Eigendecomposition of a symmetric matrix.

    Backed by LAPACK (``numpy.linalg.eigh``); :func:`jacobi_eigh` is an
    independent pure-numpy solver with the same output convention.
    """
    A = _check_symmetric(A)
    try:
        values, vectors = np.linalg.eigh((A + A.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition did not converge: {exc}") from exc
    return _sorted_result(values, vectors)


def jacobi_eigh(A, max_sweeps=100, tol=1e-12):
    """Cyclic Jacobi eigensolver.

    Sweeps over all off-diagonal pairs until the largest off-diagonal entry is
    at most ``tol * ||A||_F``.  Slow for large matrices; used as a reference.
    """
    A = _check_symmetric(A).copy()
    A = (A + A.T) / 2.0
    d = A.shape[0]
    V = np.eye(d)
    threshold = tol * max(np.linalg.norm(A), np.finfo(float).tiny)
    off = 0.0
    for _ in range(max_sweeps):
        off = np.max(np.abs(A - np.diag(np.diag(A)))) if d > 1 else 0.0
        if off <= threshold:
            return _sorted_result(np.diag(A).copy(), V)
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = A[p, q]
                if abs(apq) <= threshold * 1e-3:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    raise NumericError(
        f"Jacobi eigensolver did not converge in {max_sweeps} sweeps "
        f"(max off-diagonal residual {off:.3e})"
    )


def cholesky(A):
    """Lower-triangular ``L`` with ``L @ L.T == A`` for symmetric positive-definite ``A``."""
    A = _check_symmetric(A)
    d = A.shape[0]
    L = np.zeros_like(A)
    for j in range(d):
        pivot = A[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > 0.0:
            raise NumericError(
                f"matrix is not positive definite: pivot {j} is {pivot:.3e}"
            )
        L[j, j] = np.sqrt(pivot)
        if j + 1 < d:
            L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def covariance(X, eps=0.0):
    """Biased (1/n) covariance of the rows of ``X`` plus ``eps * I``.

    ``X`` has shape (n_samples, n_features); the result is
    (n_features, n_features) and exactly symmetric.
    """
    X = as_matrix(X, "X")
    n = X.shape[0]
    if n < 2:
        raise DegenerateInputError(f"covariance needs at least 2 samples, got {n}")
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / n
    C = (C + C.T) / 2.0
    if eps:
        C = C + eps * np.eye(C.shape[0])
    return C
