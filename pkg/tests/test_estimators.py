import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from adaptive_control.estimators import AdaptiveController, PosteriorMoments
from adaptive_control.filtering import posterior_mean, posterior_variance

TINY_GRID = {
    "n_dyadic": 2,
    "a_axis": {"min": -2.0, "max": 2.0, "count": 5},
    "upsilon_axis": {"min": -2.0, "max": 4.0, "count": 5},
    "gamma_axis": {"min": 0.0, "max": 8.0, "count": 3},
}


def test_posterior_moments_transform(uniform_prior):
    X = np.array([[0.0, 0.0], [1.5, 2.0], [-3.0, 6.0]])
    tr = PosteriorMoments({"type": "uniform"}).fit(X)
    out = tr.transform(X)
    assert out.shape == (3, 2)
    np.testing.assert_allclose(out[0], [0.5, 1 / 12], atol=1e-12)
    np.testing.assert_allclose(out[:, 0], posterior_mean(uniform_prior, X[:, 0], X[:, 1]), atol=1e-14)
    np.testing.assert_allclose(out[:, 1], posterior_variance(uniform_prior, X[:, 0], X[:, 1]), atol=1e-14)
    assert list(tr.get_feature_names_out()) == ["mean", "variance"]


def test_posterior_moments_third_central_is_zero_at_origin():
    out = PosteriorMoments(moments=("third_central",)).fit_transform(np.zeros((1, 2)))
    assert abs(out[0, 0]) < 1e-12


def test_posterior_moments_errors():
    with pytest.raises(NotFittedError):
        PosteriorMoments().transform(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        PosteriorMoments(moments=("kurtosis",)).fit()
    with pytest.raises(ValueError):
        PosteriorMoments().fit().transform(np.zeros((1, 3)))


def test_clone_and_params():
    est = AdaptiveController(model={"model": "wind-tunnel", "n_controls": 5}, grid=TINY_GRID)
    params = est.get_params()
    assert set(params) == {"model", "prior", "grid"}
    c = clone(est)
    assert c.get_params()["grid"] == TINY_GRID and not hasattr(c, "value_table_")
    c.set_params(prior={"type": "uniform"})
    assert c.prior == {"type": "uniform"}


def test_controller_fit_predict():
    est = AdaptiveController(model={"model": "wind-tunnel", "n_controls": 5}, grid=TINY_GRID).fit()
    X = np.array([[0.0, 1.0, 0.0, 0.0], [0.5, -1.0, 1.0, 2.0]])
    u = est.predict(X)
    assert u.shape == (2,)
    assert set(np.round(u, 12)) <= set(np.round(est.model_.controls.values, 12))
    v = est.value(X)
    assert np.all(np.isfinite(v)) and np.all(v >= 0)
    # terminal cost g(a) = 5 a^2 at T
    assert est.value(np.array([[1.0, 1.5, 0.0, 0.0]]))[0] == pytest.approx(5 * 1.5**2)
    with pytest.raises(ValueError):
        est.predict(np.zeros((1, 3)))
    with pytest.raises(NotFittedError):
        AdaptiveController().predict(X)
