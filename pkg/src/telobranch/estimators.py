"""scikit-learn style wrappers around the growth-rate and profile estimators.

``X`` rows are initial traits (x_1..x_2k, age).  Each fit runs independent
simulations, so the estimators hold no learned state beyond their results.
"""

import numpy as np
from sklearn.base import BaseEstimator

from .model import Alive
from .population import estimate_growth_rate
from .profile import DEFAULT_AGE_BINS, DEFAULT_X_BINS, check_product_form, estimate_stationary


def _initial_state(model, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape != (1, 2 * model.k + 1):
        raise ValueError(f"X must be one row of {2 * model.k + 1} values (telomeres then age)")
    return Alive(X[0, :-1], float(X[0, -1]))


class GrowthRateEstimator(BaseEstimator):
    """Estimate the Malthusian growth rate from the mean population size."""

    def __init__(self, model=None, horizon=10.0, n_points=21, n_replicates=1000, burn_in=None, cap=10**6,
                 threads=1, n_boot=200, seed=0):
        self.model = model
        self.horizon = horizon
        self.n_points = n_points
        self.n_replicates = n_replicates
        self.burn_in = burn_in
        self.cap = cap
        self.threads = threads
        self.n_boot = n_boot
        self.seed = seed

    def fit(self, X, y=None):
        init = _initial_state(self.model, X)
        t_grid = np.linspace(0.0, self.horizon, self.n_points)
        est = estimate_growth_rate(self.model, init, t_grid, self.n_replicates, self.seed, burn_in=self.burn_in,
                                   cap=self.cap, threads=self.threads, n_boot=self.n_boot)
        self.rate_ = est.rate
        self.ci_ = (est.ci_low, est.ci_high)
        self.table_ = est.table
        self.n_capped_ = est.n_capped
        return self

    def predict(self, T):
        """Predicted mean population at times ``T`` from the fitted exponential tail."""
        T = np.asarray(T, dtype=float)
        tail = self.table_[self.table_[:, 1] > 0]
        anchor_t, anchor_m = tail[-1, 0], tail[-1, 1]
        return anchor_m * np.exp(self.rate_ * (T - anchor_t))


class StationaryProfileEstimator(BaseEstimator):
    """Pooled long-run (x, age) histogram with a product-form check of the age law."""

    def __init__(self, model=None, t_burn=5.0, t_snapshot=10.0, n_replicates=10, x_bins=DEFAULT_X_BINS,
                 age_bins=DEFAULT_AGE_BINS, cap=10**6, lambda_hat=None, seed=0):
        self.model = model
        self.t_burn = t_burn
        self.t_snapshot = t_snapshot
        self.n_replicates = n_replicates
        self.x_bins = x_bins
        self.age_bins = age_bins
        self.cap = cap
        self.lambda_hat = lambda_hat
        self.seed = seed

    def fit(self, X, y=None):
        init = _initial_state(self.model, X)
        lam = np.nan if self.lambda_hat is None else self.lambda_hat
        self.histogram_ = estimate_stationary(self.model, init, self.t_burn, self.t_snapshot, self.n_replicates,
                                              bins=(self.x_bins, self.age_bins), cap=self.cap, seed=self.seed,
                                              lambda_hat=lam)
        return self

    def score(self, X=None, y=None, x_edges=4):
        """Negative largest per-bin KS distance of the age law (higher is better)."""
        if self.lambda_hat is None:
            raise ValueError("lambda_hat is required to score the product form")
        return -check_product_form(self.histogram_, self.model, self.lambda_hat, x_edges=x_edges).max_ks
