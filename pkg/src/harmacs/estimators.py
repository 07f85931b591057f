"""scikit-learn style wrappers around projection and flow."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .field import AcsField, energy, harmonic_residual
from .flow import FlowConfig, run_flow
from .matalg import MetricAtPoint, compatible_projection


class CompatibleProjector(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping stacks of structures to compatible ones.

    ``metric`` is a metric matrix (or ``MetricAtPoint``) applied at every
    sample; ``None`` means Euclidean.
    """

    def __init__(self, metric=None, tol=1e-8):
        self.metric = metric
        self.tol = tol

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        self.n_features_in_ = X.shape[-1]
        return self

    def transform(self, X):
        g = self.metric
        if g is not None and not isinstance(g, MetricAtPoint):
            g = MetricAtPoint.from_g(g)
        return compatible_projection(X, g, tol=self.tol)


class HarmonicFlow(BaseEstimator):
    """Runs the reprojected heat flow from an initial field.

    After :meth:`fit`, ``field_`` holds the final field, ``history_`` the
    per-step records and ``status_`` the termination reason.
    """

    def __init__(self, dt_factor=None, max_steps=10000, residual_tol=1e-6,
                 energy_stall_tol=1e-12, stall_window=50, reproject_every=1,
                 method="heat", metric=None):
        self.dt_factor = dt_factor
        self.max_steps = max_steps
        self.residual_tol = residual_tol
        self.energy_stall_tol = energy_stall_tol
        self.stall_window = stall_window
        self.reproject_every = reproject_every
        self.method = method
        self.metric = metric

    def _config(self):
        return FlowConfig(dt_factor=self.dt_factor, max_steps=self.max_steps,
                          residual_tol=self.residual_tol,
                          energy_stall_tol=self.energy_stall_tol,
                          stall_window=self.stall_window,
                          reproject_every=self.reproject_every,
                          metric=self.metric, method=self.method)

    def fit(self, X, y=None):
        if not isinstance(X, AcsField):
            raise TypeError("HarmonicFlow.fit expects an AcsField")
        state = run_flow(X, self._config())
        self.field_ = state.field
        self.history_ = list(state.history)
        self.status_ = state.status
        self.n_steps_ = state.step
        return self

    def transform(self, X=None):
        return self.field_

    def score(self, X=None, y=None):
        """Negative energy of the fitted field (higher is better)."""
        return -energy(self.field_, self.metric)

    def residual(self):
        return harmonic_residual(self.field_, self.metric).sup
