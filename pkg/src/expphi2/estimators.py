"""scikit-learn style wrappers around the samplers and transforms.

Fields are passed as arrays of shape ``(n_samples, n, n)``. Estimators follow
the usual contract: hyperparameters in ``__init__``, learned state in
trailing-underscore attributes, ``get_params``/``set_params`` inherited.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import besov, dynamics, fields, gff, wick
from .gff import ModelParams

__all__ = ["GFFSampler", "WickTransformer", "FejerSmoother", "RegularityEstimator", "StationarySampler"]


def _model(gamma, mass, eps_cells, fejer_order, M, n):
    return ModelParams.from_gamma(gamma, mass=mass, eps_cells=eps_cells, fejer_order=fejer_order, M=M, n=n)


def _check_batch(X, grid):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    return fields.check_field(X, grid)


class GFFSampler(BaseEstimator):
    """Exact massive GFF draws. ``fit`` takes no data and only resolves the grid."""

    def __init__(self, mass=1.0, M=1.0, n=64, seed=0):
        self.mass, self.M, self.n, self.seed = mass, M, n, seed

    def fit(self, X=None, y=None):
        self.grid_ = fields.GridSpec(self.M, self.n)
        self.params_ = ModelParams(0.0, self.mass, 2 * self.grid_.spacing, self.n // 4, self.grid_)
        return self

    def sample(self, n_samples=1):
        check_is_fitted(self, "params_")
        return gff.sample_gff(self.params_, self.seed, size=n_samples)


class WickTransformer(TransformerMixin, BaseEstimator):
    """Map GFF samples to Wick exponentials ``:exp(alpha g*X):``."""

    def __init__(self, gamma=0.1, mass=1.0, eps_cells=4.0, fejer=False, fejer_order=None, M=1.0, n=64):
        self.gamma, self.mass, self.eps_cells = gamma, mass, eps_cells
        self.fejer, self.fejer_order, self.M, self.n = fejer, fejer_order, M, n

    def fit(self, X=None, y=None):
        self.params_ = _model(self.gamma, self.mass, self.eps_cells, self.fejer_order, self.M, self.n)
        self.constant_ = (gff.renorm_constant_fejer(self.params_.fejer_order, self.params_.epsilon, self.params_)
                          if self.fejer else gff.renorm_constant(self.params_.epsilon, self.params_))
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = _check_batch(X, self.params_.grid)
        fn = wick.wick_exp_fejer if self.fejer else wick.wick_exp
        return fn(X, self.params_).values


class FejerSmoother(TransformerMixin, BaseEstimator):
    def __init__(self, order=16, M=1.0, n=64):
        self.order, self.M, self.n = order, M, n

    def fit(self, X=None, y=None):
        self.grid_ = fields.GridSpec(self.M, self.n)
        self.multiplier_ = fields.fejer_multiplier(self.order, self.grid_)
        return self

    def transform(self, X):
        check_is_fitted(self, "multiplier_")
        return fields.apply_multiplier(_check_batch(X, self.grid_), self.multiplier_, self.grid_)


class RegularityEstimator(BaseEstimator):
    """Dyadic-slope regularity of a sample of fields; ``levels="scaling"`` uses :func:`besov.scaling_levels`."""

    def __init__(self, p=2.0, levels=None, mass=1.0, epsilon=None, M=1.0, n_jackknife=20):
        self.p, self.levels, self.mass, self.epsilon = p, levels, mass, epsilon
        self.M, self.n_jackknife = M, n_jackknife

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        grid = fields.GridSpec(self.M, X.shape[-1])
        levels = self.levels
        if levels == "scaling":
            if self.epsilon is None:
                raise ValueError("levels='scaling' needs epsilon")
            levels = besov.scaling_levels(grid, self.mass, self.epsilon)
        self.report_ = besov.regularity_slope(_check_batch(X, grid), grid, self.p, levels, self.n_jackknife)
        self.regularity_ = self.report_["estimate"]
        self.stderr_ = self.report_["stderr"]
        return self


class StationarySampler(BaseEstimator):
    """Stationary ``(X, Y)`` ensemble of the coupled flow; ``fit`` runs the chains."""

    def __init__(self, gamma=0.1, mass=1.0, eps_cells=4.0, fejer_order=None, M=1.0, n=64, dt=0.01,
                 scheme="lie", n_samples=1000, n_chains=None, burn_in=None, spacing=None, seed=0, workers=1):
        self.gamma, self.mass, self.eps_cells, self.fejer_order = gamma, mass, eps_cells, fejer_order
        self.M, self.n, self.dt, self.scheme = M, n, dt, scheme
        self.n_samples, self.n_chains, self.burn_in, self.spacing = n_samples, n_chains, burn_in, spacing
        self.seed, self.workers = seed, workers

    def fit(self, X=None, y=None):
        self.params_ = _model(self.gamma, self.mass, self.eps_cells, self.fejer_order, self.M, self.n)
        self.ensemble_ = dynamics.simulate_stationary(
            self.params_, burn_in=self.burn_in, n_samples=self.n_samples, spacing=self.spacing, seed=self.seed,
            dt=self.dt, scheme=self.scheme, n_chains=self.n_chains, workers=self.workers)
        return self

    def sample(self):
        check_is_fitted(self, "ensemble_")
        return self.ensemble_.X, self.ensemble_.Y
