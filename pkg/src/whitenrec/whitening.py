"""Non-parametric whitening of embedding matrices, optionally group-wise.

The :class:`Whitener` transformer fits one whitening matrix per contiguous
block of features.  With ``n_groups=1`` the output has identity covariance
(full whitening); with ``n_groups > 1`` each block is whitened on its own and
correlations between blocks are left in place (relaxed whitening).
"""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator, OneToOneFeatureMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .exceptions import NumericError, ShapeError
from .linalg import as_matrix, cholesky, covariance, sym_eigendecompose

DEFAULT_EPS = 1e-5


class WhiteningMethod(str, Enum):
    ZCA = "zca"
    PCA = "pca"
    CD = "cd"
    BN = "bn"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown whitening method {value!r}; expected one of {valid}") from None


def valid_group_counts(n_features):
    return [g for g in range(1, n_features + 1) if n_features % g == 0]


def _rank_tol(cov):
    # eigenvalues this small relative to the largest variance are rounding noise
    return cov.shape[0] * np.finfo(np.float64).eps * float(np.max(np.diag(cov)))


def _whitening_matrix(cov, method, group):
    if method is WhiteningMethod.BN:
        var = np.diag(cov)
        if np.any(var <= 0):
            raise NumericError(
                f"group {group}: zero variance feature; increase eps"
            )
        return np.diag(1.0 / np.sqrt(var))
    if method is WhiteningMethod.CD:
        try:
            L = cholesky(cov)
        except NumericError as exc:
            raise NumericError(f"group {group}: {exc}; increase eps") from exc
        pivots = np.diag(L) ** 2
        if pivots.min() <= _rank_tol(cov):
            j = int(np.argmin(pivots))
            raise NumericError(
                f"group {group}: covariance is numerically singular "
                f"(pivot {j} is {pivots[j]:.3e}); increase eps")
        return np.tril(solve_triangular(L, np.eye(L.shape[0]), lower=True))
    values, vectors = sym_eigendecompose(cov)
    if values[-1] <= _rank_tol(cov):
        raise NumericError(
            f"group {group}: covariance is not positive definite "
            f"(smallest eigenvalue {values[-1]:.3e}); increase eps"
        )
    scaled = vectors.T / np.sqrt(values)[:, None]
    if method is WhiteningMethod.PCA:
        return scaled
    phi = vectors @ scaled
    return (phi + phi.T) / 2.0


class Whitener(OneToOneFeatureMixin, TransformerMixin, BaseEstimator):
    """Whiten feature vectors with ZCA, PCA, Cholesky (CD) or per-feature (BN) scaling.

    Parameters
    ----------
    method : {"zca", "pca", "cd", "bn"}, default="zca"
        How the whitening matrix is derived from each group covariance.
    n_groups : int, default=1
        Number of contiguous feature blocks whitened independently.  Must
        divide the number of features.  Has no effect for ``"bn"``.
    eps : float, default=1e-5
        Ridge added to every group covariance before factorization.

    Attributes
    ----------
    mean_ : ndarray of shape (n_features,)
    components_ : list of ndarray
        One (block, block) whitening matrix per group.
    covariances_ : list of ndarray
        The regularized covariance of each group at fit time.
    """

    def __init__(self, method="zca", n_groups=1, eps=DEFAULT_EPS):
        self.method = method
        self.n_groups = n_groups
        self.eps = eps

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64, ensure_min_samples=2)
        n, d = X.shape
        method = WhiteningMethod.parse(self.method)
        G = int(self.n_groups)
        if G < 1 or d % G:
            raise ShapeError(
                f"n_groups={self.n_groups} does not divide {d} features; "
                f"valid values: {valid_group_counts(d)}"
            )
        if self.eps < 0:
            raise ValueError(f"eps must be non-negative, got {self.eps}")
        size = d // G
        self.method_ = method
        self.n_features_in_ = d
        self.group_size_ = size
        self.mean_ = X.mean(axis=0)
        self.covariances_ = []
        self.components_ = []
        for g in range(G):
            block = X[:, g * size:(g + 1) * size]
            cov = covariance(block, self.eps)
            self.covariances_.append(cov)
            self.components_.append(_whitening_matrix(cov, method, g))
        return self

    @classmethod
    def from_components(cls, mean, components, method="zca", eps=0.0):
        """Build a fitted whitener from explicit per-group means and matrices."""
        components = [as_matrix(c, "component") for c in components]
        size = components[0].shape[0]
        if any(c.shape != (size, size) for c in components):
            raise ShapeError("all components must be square and of equal size")
        mean = np.asarray(mean, dtype=np.float64).ravel()
        if mean.shape[0] != size * len(components):
            raise ShapeError("mean length does not match the components")
        obj = cls(method=method, n_groups=len(components), eps=eps)
        obj.method_ = WhiteningMethod.parse(method)
        obj.n_features_in_ = mean.shape[0]
        obj.group_size_ = size
        obj.mean_ = mean
        obj.components_ = components
        obj.covariances_ = None
        return obj

    def transform(self, X):
        check_is_fitted(self, "components_")
        try:
            X = validate_data(self, X, dtype=np.float64, reset=False)
        except ValueError as exc:
            if "features" in str(exc):
                raise ShapeError(str(exc)) from exc
            raise
        size = self.group_size_
        Z = np.empty_like(X)
        for g, phi in enumerate(self.components_):
            sl = slice(g * size, (g + 1) * size)
            Z[:, sl] = (X[:, sl] - self.mean_[sl]) @ phi.T
        return Z


@dataclass
class WhiteningReport:
    """Outcome of :func:`verify_whitening`.

    ``group_deviation[g]`` is the largest entry of
    ``|cov(Z_g) - (I - eps * phi_g phi_g^T)|`` (diagonal only for BN);
    ``cross_group[(g, h)]`` is the largest magnitude in the covariance block
    between groups ``g < h``.
    """

    group_deviation: list
    cross_group: dict = field(default_factory=dict)
    tol: float = 1e-8

    @property
    def max_deviation(self):
        return max(self.group_deviation)

    @property
    def passed(self):
        return self.max_deviation <= self.tol

    def lines(self):
        out = [f"passed = {self.passed}", f"tolerance = {self.tol:.3e}",
               f"max_deviation = {self.max_deviation:.6e}"]
        out += [f"group_{g}_deviation = {v:.6e}" for g, v in enumerate(self.group_deviation)]
        out += [f"cross_{g}_{h} = {v:.6e}" for (g, h), v in sorted(self.cross_group.items())]
        return out


def verify_whitening(whitener, Z, tol=1e-8):
    """Check that ``Z`` has the covariance structure the fitted ``whitener`` promises."""
    check_is_fitted(whitener, "components_")
    Z = as_matrix(Z, "Z")
    C = covariance(Z, 0.0)
    size = whitener.group_size_
    eps = whitener.eps
    deviations = []
    for g, phi in enumerate(whitener.components_):
        sl = slice(g * size, (g + 1) * size)
        expected = np.eye(size) - eps * phi @ phi.T
        diff = np.abs(C[sl, sl] - expected)
        if whitener.method_ is WhiteningMethod.BN:
            diff = np.diag(diff)
        deviations.append(float(diff.max()))
    cross = {}
    G = len(whitener.components_)
    for g in range(G):
        for h in range(g + 1, G):
            block = C[g * size:(g + 1) * size, h * size:(h + 1) * size]
            cross[(g, h)] = float(np.abs(block).max())
    return WhiteningReport(deviations, cross, tol)


def whiten(X, method="zca", n_groups=1, eps=DEFAULT_EPS):
    """Fit a :class:`Whitener` on ``X`` and return the whitened matrix."""
    return Whitener(method=method, n_groups=n_groups, eps=eps).fit_transform(X)
