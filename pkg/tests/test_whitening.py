import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone
from sklearn.pipeline import make_pipeline
from sklearn.utils.estimator_checks import parametrize_with_checks
from sklearn.preprocessing import FunctionTransformer

from conftest import data_with_covariance
from whitenrec.exceptions import NumericError, ShapeError
from whitenrec.linalg import covariance
from whitenrec.whitening import (
    Whitener, WhiteningMethod, valid_group_counts, verify_whitening, whiten,
)

METHODS = ["zca", "pca", "cd", "bn"]
# a 4-point design whose mean is zero and covariance is exactly I
UNIT_DESIGN = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])


def correlated(n=300, d=4, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d)) @ rng.standard_normal((d, d)) + rng.standard_normal(d)


def test_diagonal_covariance_gives_diagonal_zca():
    X = data_with_covariance(np.diag([4.0, 1.0]))
    w = Whitener("zca", eps=0.0).fit(X)
    np.testing.assert_allclose(w.components_[0], np.diag([0.5, 1.0]), atol=1e-12)


@pytest.mark.parametrize("method", METHODS)
def test_identity_covariance_is_fixed_point(method):
    w = Whitener(method, eps=0.0).fit(UNIT_DESIGN)
    np.testing.assert_array_equal(w.mean_, [0.0, 0.0])
    np.testing.assert_array_equal(w.components_[0], np.eye(2))
    np.testing.assert_array_equal(whiten(UNIT_DESIGN, method, eps=0.0), UNIT_DESIGN)


@pytest.mark.parametrize("method", ["zca", "pca", "cd"])
def test_groups_equal_independent_fits(method):
    X = correlated()
    w = Whitener(method, n_groups=2).fit(X)
    for g, sl in enumerate([slice(0, 2), slice(2, 4)]):
        single = Whitener(method).fit(X[:, sl])
        np.testing.assert_allclose(w.components_[g], single.components_[0], atol=1e-10)
        np.testing.assert_allclose(w.transform(X)[:, sl], single.transform(X[:, sl]), atol=1e-10)


@pytest.mark.parametrize("method", ["zca", "pca", "cd"])
def test_output_covariance_is_identity(method):
    X = correlated(d=6, seed=3)
    Z = Whitener(method, eps=0.0).fit_transform(X)
    assert np.max(np.abs(covariance(Z) - np.eye(6))) <= 1e-8


def test_mean_maps_to_zero_and_identity_transform():
    X = correlated()
    w = Whitener().fit(X)
    np.testing.assert_allclose(w.transform(w.mean_[None, :]), 0.0, atol=0)
    ident = Whitener.from_components(np.zeros(4), [np.eye(4)])
    np.testing.assert_array_equal(ident.transform(X), X)


def test_whiten_matches_two_call_path():
    X = correlated(seed=5)
    np.testing.assert_array_equal(whiten(X, "cd", 2, 1e-3), Whitener("cd", 2, 1e-3).fit(X).transform(X))


def test_method_structure():
    X = correlated(d=8, seed=1)
    zca = Whitener("zca").fit(X).components_[0]
    cd = Whitener("cd").fit(X).components_[0]
    bn = Whitener("bn").fit(X).components_[0]
    assert np.max(np.abs(zca - zca.T)) <= 1e-9
    assert np.all(np.triu(cd, 1) == 0) and np.all(np.diag(cd) > 0)
    assert np.all(bn == np.diag(np.diag(bn)))
    per_dim = Whitener("zca", n_groups=8).fit(X).transform(X)
    np.testing.assert_allclose(per_dim, Whitener("bn").fit(X).transform(X), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(METHODS), st.sampled_from([1, 2, 3, 6]), st.integers(0, 10_000),
       st.sampled_from([0.0, 1e-5, 1e-2]))
def test_phi_whitens_regularized_covariance(method, groups, seed, eps):
    X = correlated(n=120, d=6, seed=seed)
    w = Whitener(method, groups, eps).fit(X)
    assert len(w.components_) == groups
    for phi, cov in zip(w.components_, w.covariances_):
        M = phi @ cov @ phi.T
        if method == "bn":
            M = np.diag(np.diag(M))
        assert np.max(np.abs(M - np.eye(len(M)))) <= 1e-8
    assert verify_whitening(w, w.transform(X)).passed


def test_verify_reports_cross_group_correlation():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((500, 2))
    X = np.hstack([a, a + 0.3 * rng.standard_normal((500, 2))])
    w = Whitener("zca", n_groups=2, eps=0.0).fit(X)
    rep = verify_whitening(w, w.transform(X))
    assert rep.max_deviation <= 1e-8
    assert rep.cross_group[(0, 1)] > 0.1
    assert verify_whitening(Whitener().fit(X), Whitener().fit_transform(X)).cross_group == {}


def test_errors():
    X = correlated(d=6)
    with pytest.raises(ShapeError, match=r"\[1, 2, 3, 6\]"):
        Whitener(n_groups=4).fit(X)
    with pytest.raises(NumericError, match="increase eps"):
        Whitener("zca", eps=0.0).fit(np.hstack([X, X[:, :1]]))
    with pytest.raises(NumericError, match="increase eps"):
        Whitener("cd", eps=0.0).fit(np.hstack([X, X[:, :1]]))
    with pytest.raises(ShapeError):
        Whitener().fit(X).transform(X[:, :5])
    with pytest.raises(ValueError, match="unknown whitening method"):
        Whitener("svd").fit(X)


def test_singular_input_recovers_with_eps():
    X = correlated(d=6)
    Xs = np.hstack([X, X[:, :1]])
    Z = Whitener("zca", eps=1e-5).fit_transform(Xs)
    assert np.all(np.isfinite(Z))


def test_sklearn_integration():
    w = Whitener("pca", n_groups=2, eps=1e-3)
    assert w.get_params() == {"method": "pca", "n_groups": 2, "eps": 1e-3}
    c = clone(w).set_params(method="cd")
    assert c.method == "cd" and w.method == "pca"
    X = correlated()
    pipe = make_pipeline(FunctionTransformer(lambda a: 2 * a), Whitener(eps=0.0))
    np.testing.assert_allclose(pipe.fit_transform(X), whiten(X, eps=0.0), atol=1e-10)
    assert list(Whitener().fit(X).get_feature_names_out()) == ["x0", "x1", "x2", "x3"]


def test_enum_and_divisors():
    assert WhiteningMethod.parse("ZCA") is WhiteningMethod.ZCA
    assert valid_group_counts(12) == [1, 2, 3, 4, 6, 12]


@parametrize_with_checks([Whitener(eps=1e-3), Whitener("cd", eps=1e-3)])
def test_sklearn_estimator_checks(estimator, check):
    check(estimator)
