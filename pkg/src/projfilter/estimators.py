"""Transformer-style wrapper: observation increments in, filter path out."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ConfigError
from .filters import FILTERS, cubic_sensor, linear_model, make_stepper


class GaussianFilter(TransformerMixin, BaseEstimator):
    """Run one Gaussian filter over a stream of observation increments.

    ``transform(dY)`` takes increments of shape ``(steps,)`` or ``(steps, 1)``
    and returns the ``(steps + 1, 2)`` path of (mean, sd), starting at the
    prior.  Nothing is learned from data: ``fit`` only validates the
    parameters and builds the model.
    """

    def __init__(self, filter="jet_hell", preset="cubic_sensor", epsilon=0.05, prior_mean=0.0, prior_sd=1.0,
                 dt=1e-3, order=40):
        self.filter = filter
        self.preset = preset
        self.epsilon = epsilon
        self.prior_mean = prior_mean
        self.prior_sd = prior_sd
        self.dt = dt
        self.order = order

    def fit(self, X=None, y=None):
        if self.filter not in FILTERS:
            raise ConfigError(f"unknown filter {self.filter!r}; expected one of {FILTERS}")
        if self.preset == "cubic_sensor":
            self.model_ = cubic_sensor(self.epsilon)
        elif self.preset == "linear":
            self.model_ = linear_model()
        else:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if not (self.dt > 0 and self.prior_sd > 0):
            raise ConfigError("dt and prior_sd must be positive")
        self.stepper_ = make_stepper(self.filter, self.model_, self.order)
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "stepper_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        dY = check_array(X, ensure_min_samples=0)
        if dY.shape[1] != 1:
            raise ValueError(f"expected one increment per row, got {dY.shape[1]} columns")
        out = np.empty((len(dY) + 1, 2))
        out[0] = self.prior_mean, self.prior_sd
        for k, dy in enumerate(dY[:, 0]):
            out[k + 1] = self.stepper_(out[k], k * self.dt, self.dt, dy)
        return out
