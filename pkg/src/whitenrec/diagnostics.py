"""Geometry of embedding sets: cosine statistics, spectra, conditioning, uniformity.

Every function takes row-oriented matrices (one vector per row).  Pair
statistics use all unordered distinct pairs when there are at most
``EXACT_PAIR_LIMIT`` vectors, otherwise a fixed-seed sample of
``SAMPLED_PAIRS`` pairs.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateInputError
from .linalg import as_matrix, covariance, sym_eigendecompose

EXACT_PAIR_LIMIT = 4096
SAMPLED_PAIRS = 1_000_000
PAIR_SEED = 0
_CHUNK = 65536


@dataclass
class SpectrumReport:
    normalized_singular_values: np.ndarray


@dataclass
class ConditioningReport:
    condition_number: float
    lambda_max: float
    lambda_min: float
    clamped: bool = False


@dataclass
class UniformityReport:
    l_align: float
    l_uniform_user: float
    l_uniform_item: float
    pair_count_used: int


def _unit_rows(X, what="row"):
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateInputError(f"{what} {zero[0]} has zero norm")
    return X / norms[:, None]


def _sample_pairs(n, count, seed=PAIR_SEED):
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=count)
    j = (i + rng.integers(1, n, size=count)) % n
    return i, j


def _pair_values(U, kernel):
    """Apply ``kernel`` to the dot products of unit rows over the pair set.

    Returns the flat array of kernel values (exact path) or sampled values.
    """
    n = U.shape[0]
    if n <= EXACT_PAIR_LIMIT:
        iu, ju = np.triu_indices(n, k=1)
        G = U @ U.T
        return kernel(G[iu, ju])
    i, j = _sample_pairs(n, SAMPLED_PAIRS)
    out = np.empty(SAMPLED_PAIRS)
    for start in range(0, SAMPLED_PAIRS, _CHUNK):
        sl = slice(start, start + _CHUNK)
        out[sl] = kernel(np.einsum("ij,ij->i", U[i[sl]], U[j[sl]]))
    return out


def pairwise_cosines(X):
    """Cosine similarity of every unordered distinct pair of rows (or a fixed sample)."""
    X = as_matrix(X, "X")
    if X.shape[0] < 2:
        raise DegenerateInputError("need at least 2 vectors")
    return _pair_values(_unit_rows(X), lambda c: np.clip(c, -1.0, 1.0))


def mean_pairwise_cosine(X):
    """Mean cosine similarity over distinct pairs of rows of ``X``."""
    X = as_matrix(X, "X")
    n = X.shape[0]
    if n < 2:
        raise DegenerateInputError("need at least 2 vectors")
    U = _unit_rows(X)
    if n <= EXACT_PAIR_LIMIT:
        # sum over all ordered pairs minus the n unit self-similarities
        total = U.sum(axis=0)
        return float((total @ total - np.sum(U * U)) / (n * (n - 1)))
    return float(pairwise_cosines(X).mean())


def cosine_cdf(X, grid):
    """Fraction of pairs whose cosine is ``<=`` each threshold in ``grid``."""
    grid = np.asarray(grid, dtype=np.float64).ravel()
    if grid.size and np.any(np.diff(grid) < 0):
        raise ValueError("grid must be ascending")
    values = np.sort(pairwise_cosines(X))
    counts = np.searchsorted(values, grid, side="right")
    return grid, counts / values.size


def singular_spectrum(X):
    """Normalized singular values of the column-centered data."""
    X = as_matrix(X, "X")
    n = X.shape[0]
    values = sym_eigendecompose(covariance(X, 0.0)).eigenvalues
    sv = np.sqrt(np.clip(values * n, 0.0, None))
    if sv[0] <= 0:
        raise DegenerateInputError("all vectors are identical; spectrum is zero")
    return SpectrumReport(sv / sv[0])


def condition_number(V, clamp=1e-12):
    """Condition number of the covariance of the rows of ``V``."""
    values = sym_eigendecompose(covariance(V, 0.0)).eigenvalues
    lmax = float(values[0])
    if lmax <= 0:
        raise DegenerateInputError("covariance has no positive eigenvalue")
    lmin = float(values[-1])
    floor = clamp * lmax
    clamped = lmin < floor
    if clamped:
        lmin = floor
    return ConditioningReport(lmax / lmin, lmax, lmin, clamped)


def _log_mean_gaussian(U):
    # ||a - b||^2 = 2 - 2 cos for unit vectors
    vals = _pair_values(U, lambda c: np.exp(-2.0 * (2.0 - 2.0 * c)))
    return float(np.log(vals.mean())), vals.size


def uniformity(X):
    """log E exp(-2 ||f(x) - f(x')||^2) over distinct pairs of L2-normalized rows."""
    X = as_matrix(X, "X")
    if X.shape[0] < 2:
        raise DegenerateInputError("need at least 2 vectors")
    return _log_mean_gaussian(_unit_rows(X))[0]


def alignment_uniformity(user_reprs, item_reprs, positives):
    """Alignment of positive (user, item) pairs and uniformity of each side."""
    S = _unit_rows(as_matrix(user_reprs, "user_reprs"), "user")
    V = _unit_rows(as_matrix(item_reprs, "item_reprs"), "item")
    pos = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
    if pos.shape[0] == 0:
        raise DegenerateInputError("positives must be non-empty")
    if pos[:, 0].min() < 0 or pos[:, 0].max() >= S.shape[0] \
            or pos[:, 1].min() < 0 or pos[:, 1].max() >= V.shape[0]:
        raise IndexError("positive pair index out of range")
    if S.shape[0] < 2 or V.shape[0] < 2:
        raise DegenerateInputError("uniformity needs at least 2 users and 2 items")
    diff = S[pos[:, 0]] - V[pos[:, 1]]
    l_align = float(np.mean(np.sum(diff * diff, axis=1)))
    l_user, n_user = _log_mean_gaussian(S)
    l_item, n_item = _log_mean_gaussian(V)
    return UniformityReport(l_align, l_user, l_item, n_user + n_item)
