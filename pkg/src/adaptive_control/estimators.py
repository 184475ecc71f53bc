"""scikit-learn style wrappers around the filter and the grid solver.

These follow the estimator conventions (hyperparameters in ``__init__``,
learned state with a trailing underscore, ``get_params``/``set_params``)
so they can be cloned, grid-searched over solver settings and persisted
like any other estimator. The functional API remains the primary one.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dynamics import model_from_config
from .filtering import Prior, posterior_central_moment, posterior_mean, posterior_moment, posterior_variance
from .solver import GridSpec, policy_from_table, solve, value_query

__all__ = ["PosteriorMoments", "AdaptiveController"]

_MOMENTS = {
    "mean": lambda p, v, g: posterior_mean(p, v, g),
    "variance": lambda p, v, g: posterior_variance(p, v, g),
    "second": lambda p, v, g: posterior_moment(p, 2, v, g),
    "third_central": lambda p, v, g: posterior_central_moment(p, 3, v, g),
}


def _prior(spec):
    if isinstance(spec, Prior):
        return spec
    return Prior.from_config(spec if spec is not None else {"type": "uniform"})


class PosteriorMoments(TransformerMixin, BaseEstimator):
    """Map information states ``(upsilon, gamma)`` to posterior moments.

    Parameters
    ----------
    prior : dict or Prior
        Prior specification, as in the config file.
    moments : tuple of str
        Any of ``"mean"``, ``"variance"``, ``"second"``, ``"third_central"``.
    """

    def __init__(self, prior=None, moments=("mean", "variance")):
        self.prior = prior
        self.moments = moments

    def fit(self, X=None, y=None):
        self.prior_ = _prior(self.prior)
        bad = [m for m in self.moments if m not in _MOMENTS]
        if bad:
            raise ValueError(f"unknown moments {bad}")
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self, "prior_")
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValueError("expected columns (upsilon, gamma)")
        cols = [np.asarray(_MOMENTS[m](self.prior_, X[:, 0], X[:, 1]), dtype=float) for m in self.moments]
        return np.column_stack(cols)

    def get_feature_names_out(self, input_features=None):
        return np.asarray(list(self.moments), dtype=object)


class AdaptiveController(BaseEstimator):
    """Grid feedback controller fitted by backward induction.

    ``fit`` ignores its data and solves the control problem described by
    ``model`` and ``prior``; ``predict`` returns the feedback control and
    :meth:`value` the value function at rows ``(t, a, upsilon, gamma)``.
    """

    def __init__(self, model=None, prior=None, grid=None):
        self.model = model
        self.prior = prior
        self.grid = grid

    def fit(self, X=None, y=None):
        self.model_ = model_from_config(self.model or {"model": "wind-tunnel"})
        self.prior_ = _prior(self.prior)
        grid = self.grid or {}
        self.grid_ = grid if isinstance(grid, GridSpec) else GridSpec.from_config(grid)
        self.value_table_, self.feedback_table_ = solve(self.model_, self.prior_, self.grid_)
        self.policy_ = policy_from_table(self.feedback_table_)
        self.n_features_in_ = 4
        return self

    def _rows(self, X):
        check_is_fitted(self, "value_table_")
        X = check_array(X, dtype=float)
        if X.shape[1] != 4:
            raise ValueError("expected columns (t, a, upsilon, gamma)")
        return X

    def predict(self, X):
        X = self._rows(X)
        out = np.empty(X.shape[0])
        for i, (t, a, v, g) in enumerate(X):
            out[i] = self.policy_(t, np.array([a]), np.array([v]), np.array([g]))[0]
        return out

    def value(self, X):
        X = self._rows(X)
        return np.array([float(value_query(self.value_table_, t, a, v, g)) for t, a, v, g in X])
