import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import data_with_covariance
from whitenrec import diagnostics as diag
from whitenrec.data import gen_anisotropic_embeddings
from whitenrec.exceptions import DegenerateInputError
from whitenrec.whitening import whiten


def test_mean_cosine_examples():
    assert diag.mean_pairwise_cosine([[1.0, 2.0], [1.0, 2.0]]) == pytest.approx(1.0, abs=1e-15)
    assert diag.mean_pairwise_cosine([[1.0, 0.0], [0.0, 1.0]]) == 0.0
    with pytest.raises(DegenerateInputError, match="row 1"):
        diag.mean_pairwise_cosine([[1.0, 0.0], [0.0, 0.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.integers(1, 6), st.integers(0, 10_000))
def test_mean_cosine_matches_enumeration(n, d, seed):
    X = np.random.default_rng(seed).standard_normal((n, d)) + 0.1
    U = X / np.linalg.norm(X, axis=1, keepdims=True)
    brute = np.mean([U[i] @ U[j] for i, j in itertools.combinations(range(n), 2)])
    assert diag.mean_pairwise_cosine(X) == pytest.approx(brute, abs=1e-12)
    assert -1.0 <= diag.mean_pairwise_cosine(X) <= 1.0


def test_sampled_path_for_large_sets(monkeypatch):
    monkeypatch.setattr(diag, "EXACT_PAIR_LIMIT", 50)
    monkeypatch.setattr(diag, "SAMPLED_PAIRS", 20_000)
    X = np.random.default_rng(0).standard_normal((200, 8)) + 1.0
    exact = X / np.linalg.norm(X, axis=1, keepdims=True)
    G = exact @ exact.T
    truth = (G.sum() - 200) / (200 * 199)
    a, b = diag.mean_pairwise_cosine(X), diag.mean_pairwise_cosine(X)
    assert a == b
    assert a == pytest.approx(truth, abs=0.01)


def test_cosine_cdf_examples():
    grid, frac = diag.cosine_cdf(np.eye(3), [-0.5, 0.0, 0.5])
    np.testing.assert_array_equal(frac, [0.0, 1.0, 1.0])
    _, frac = diag.cosine_cdf(np.ones((4, 3)), [0.0, 1.0])
    assert frac[-1] == 1.0
    X = np.array([[1.0, 0.0], [1.0, 1.0], [-1.0, 0.2]])
    U = X / np.linalg.norm(X, axis=1, keepdims=True)
    cos = [U[0] @ U[1], U[0] @ U[2], U[1] @ U[2]]
    grid = np.linspace(-1, 1, 41)
    _, frac = diag.cosine_cdf(X, grid)
    np.testing.assert_array_equal(frac, [np.mean(np.array(cos) <= t) for t in grid])
    with pytest.raises(ValueError):
        diag.cosine_cdf(X, [0.5, 0.0])


def test_spectrum_examples():
    X = data_with_covariance(np.diag([4.0, 1.0]))
    np.testing.assert_allclose(diag.singular_spectrum(X).normalized_singular_values, [1.0, 0.5],
                               atol=1e-12)
    Z = whiten(np.random.default_rng(1).standard_normal((300, 6)) @ np.diag([5, 4, 3, 2, 1, 0.5]),
               eps=0.0)
    np.testing.assert_allclose(diag.singular_spectrum(Z).normalized_singular_values, 1.0, atol=1e-6)
    with pytest.raises(DegenerateInputError):
        diag.singular_spectrum(np.ones((5, 3)))


def test_rank_one_dominant_spectrum():
    # one latent factor with large loadings plus small isotropic noise
    rng = np.random.default_rng(0)
    u = rng.standard_normal(64)
    u /= np.linalg.norm(u)
    X = 10.0 * rng.standard_normal((500, 1)) * u + rng.standard_normal((500, 64))
    assert diag.singular_spectrum(X).normalized_singular_values[1] < 0.2


def test_condition_number_examples():
    assert diag.condition_number(data_with_covariance(np.eye(3))).condition_number == \
        pytest.approx(1.0, abs=1e-12)
    assert diag.condition_number(data_with_covariance(np.diag([9.0, 1.0]))).condition_number == \
        pytest.approx(9.0, rel=1e-12)
    X = gen_anisotropic_embeddings(200, 16, seed=2)
    assert diag.condition_number(whiten(X, eps=0.0)).condition_number <= 1 + 1e-6
    rep = diag.condition_number(np.hstack([X, X[:, :1]]))
    assert rep.clamped and rep.condition_number == pytest.approx(1e12)
    with pytest.raises(DegenerateInputError):
        diag.condition_number(np.ones((4, 2)))


def _uniform_oracle(U):
    vals = [np.exp(-2 * np.sum((U[i] - U[j]) ** 2)) for i, j in itertools.combinations(range(len(U)), 2)]
    return np.log(np.mean(vals))


def test_alignment_uniformity_examples():
    S = np.array([[1.0, 0.0], [0.0, 2.0]])
    rep = diag.alignment_uniformity(S, 3 * S, [(0, 0), (1, 1)])
    assert rep.l_align == 0.0
    rep = diag.alignment_uniformity([[1.0, 0.0], [-1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]], [(0, 0)])
    assert rep.l_uniform_user == pytest.approx(-8.0, abs=1e-12)

    S = np.array([[1.0, 2.0, 0.0], [0.5, -1.0, 1.0], [0.0, 0.3, -2.0]])
    V = np.array([[2.0, 0.0, 1.0], [1.0, 1.0, 1.0], [-1.0, 0.5, 0.0]])
    pos = [(0, 1), (1, 2), (2, 0)]
    rep = diag.alignment_uniformity(S, V, pos)
    Su = S / np.linalg.norm(S, axis=1, keepdims=True)
    Vu = V / np.linalg.norm(V, axis=1, keepdims=True)
    assert rep.l_align == pytest.approx(np.mean([np.sum((Su[a] - Vu[b]) ** 2) for a, b in pos]), abs=1e-12)
    assert rep.l_uniform_user == pytest.approx(_uniform_oracle(Su), abs=1e-12)
    assert rep.l_uniform_item == pytest.approx(_uniform_oracle(Vu), abs=1e-12)
    assert rep.pair_count_used == 6
    with pytest.raises(DegenerateInputError):
        diag.alignment_uniformity(S, np.zeros((3, 3)), pos)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(2, 5), st.integers(0, 10_000))
def test_uniformity_bounds(n, d, seed):
    X = np.random.default_rng(seed).standard_normal((n, d))
    # exp(-2 * ||a-b||^2) lies in [e^-8, 1]
    assert -8.0 - 1e-12 <= diag.uniformity(X) <= 1e-12
