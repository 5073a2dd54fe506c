"""Scikit-learn style estimators wrapping the two-step threshold fit.

These give the algorithm a fit/predict surface with ``get_params`` /
``set_params`` so it drops into pipelines and model-selection tooling. The
threshold variable can either be passed alongside X (``fit(X, y, q=q)``)
or designated as a column of X via ``q_col``, in which case the standard
two-argument signatures work end to end. The designated column is removed
from the regressors; duplicate it in X if it should also enter the model.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.exceptions import NotFittedError

from .data import Dataset, IndicatorDirection
from .losses import LossSpec, sigmoid
from .pipeline import FitConfig, fit_full
from .solvers import SolverOptions


def _validate_Xq(X, q, q_col, n_expected=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-d")
    if q_col is not None:
        if q is not None:
            raise ValueError("pass q either as a column of X (q_col) or explicitly, not both")
        col = int(q_col)
        if not -X.shape[1] <= col < X.shape[1]:
            raise ValueError(f"q_col={q_col} out of range for {X.shape[1]} columns")
        q = X[:, col]
        X = np.delete(X, col % X.shape[1], axis=1)
    elif q is None:
        raise ValueError("the threshold variable q is required (argument or q_col)")
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape[0] != X.shape[0]:
        raise ValueError("q length must match the number of rows of X")
    if n_expected is not None and X.shape[1] != n_expected:
        raise ValueError(f"X has {X.shape[1]} features, expected {n_expected}")
    return X, q


class _BaseThresholdEstimator(BaseEstimator):
    def __init__(self, lam=0.03, mu=None, scad_a=3.7, tau_range=None,
                 grid_mode="observed", grid_size=None, direction="greater",
                 active_tol=1e-8, q_col=None, solver_options=None):
        self.lam = lam
        self.mu = mu
        self.scad_a = scad_a
        self.tau_range = tau_range
        self.grid_mode = grid_mode
        self.grid_size = grid_size
        self.direction = direction
        self.active_tol = active_tol
        self.q_col = q_col
        self.solver_options = solver_options

    def _loss_spec(self):
        raise NotImplementedError

    def _fit_config(self):
        direction = IndicatorDirection(self.direction)
        solver = self.solver_options or SolverOptions()
        tau_range = None
        if self.tau_range is not None:
            tau_range = (float(self.tau_range[0]), float(self.tau_range[1]))
        return FitConfig(spec=self._loss_spec(), lam=self.lam, mu=self.mu,
                         scad_a=self.scad_a, tau_range=tau_range,
                         grid_mode=self.grid_mode, grid_size=self.grid_size,
                         direction=direction, solver=solver,
                         active_tol=self.active_tol)

    def fit(self, X, y, q=None):
        X, q = _validate_Xq(X, q, self.q_col)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        dataset = Dataset(self._encode_y(y), X, q)
        result = fit_full(dataset, self._fit_config())
        self.n_features_in_ = dataset.p
        self.result_ = result
        self.beta_ = result.alpha_tilde.beta
        self.delta_ = result.alpha_tilde.delta
        self.theta_ = result.alpha_tilde.theta()
        self.tau_ = result.tau_tilde
        self.tau_lasso_ = result.tau_hat
        self.active_beta_ = result.active_beta.indices
        self.active_delta_ = result.active_delta.indices
        return self

    def _encode_y(self, y):
        return y

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise NotFittedError("call fit before predict")

    def decision_function(self, X, q=None):
        """Fitted linear predictor x'beta + 1{regime} x'delta at tau_tilde."""
        self._check_fitted()
        X, q = _validate_Xq(X, q, self.q_col, n_expected=self.n_features_in_)
        if IndicatorDirection(self.direction) is IndicatorDirection.GREATER:
            mask = q > self.tau_
        else:
            mask = q < self.tau_
        return X @ self.beta_ + mask * (X @ self.delta_)


class ThresholdQuantileRegressor(RegressorMixin, _BaseThresholdEstimator):
    """Two-step penalized quantile regression with an unknown threshold.

    Parameters mirror the library's FitConfig; ``gamma`` is the quantile
    level and ``mu=None`` resolves to log(p) * lam.
    """

    def __init__(self, gamma=0.5, lam=0.03, mu=None, scad_a=3.7, tau_range=None,
                 grid_mode="observed", grid_size=None, direction="greater",
                 active_tol=1e-8, q_col=None, solver_options=None):
        super().__init__(lam=lam, mu=mu, scad_a=scad_a, tau_range=tau_range,
                         grid_mode=grid_mode, grid_size=grid_size,
                         direction=direction, active_tol=active_tol,
                         q_col=q_col, solver_options=solver_options)
        self.gamma = gamma

    def _loss_spec(self):
        return LossSpec.quantile(self.gamma)

    def predict(self, X, q=None):
        return self.decision_function(X, q)


class ThresholdLogisticClassifier(ClassifierMixin, _BaseThresholdEstimator):
    """Two-step penalized logistic regression with an unknown threshold.

    ``mu=None`` resolves to 0.5 * log(p) * lam. Labels must be binary.
    """

    def _loss_spec(self):
        return LossSpec.logistic()

    def _encode_y(self, y):
        self.classes_ = np.unique(y)
        if self.classes_.shape[0] != 2:
            raise ValueError("need exactly two classes")
        return (y == self.classes_[1]).astype(np.float64)

    def predict_proba(self, X, q=None):
        p1 = sigmoid(self.decision_function(X, q))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X, q=None):
        p1 = self.predict_proba(X, q)[:, 1]
        return self.classes_[(p1 >= 0.5).astype(int)]
