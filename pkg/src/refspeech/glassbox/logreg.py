"""L2-penalized logistic regression baseline."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .nam import DimensionMismatch, _as_matrix, _sigmoid, check_binary


@dataclass
class LogRegModel:
    feature_names: tuple
    weights: np.ndarray
    bias: float
    fill: np.ndarray

    def _prepare(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.feature_names):
            raise DimensionMismatch(f"expected {len(self.feature_names)} features, got {X.shape[1]}")
        return np.where(np.isnan(X), self.fill, X)

    @property
    def intercept(self):
        """Bias plus the contribution of the training-mean input."""
        return self.bias + float(self.fill @ self.weights)

    def contributions(self, X):
        """(n, d) contributions centered on the training means."""
        return (self._prepare(X) - self.fill) * self.weights

    def decision_function(self, X):
        return self.bias + self._prepare(X) @ self.weights

    def predict_proba(self, X):
        return _sigmoid(self.decision_function(X))

    def predict(self, X):
        return (self.predict_proba(X) >= 0.5).astype(int)


def logreg_train(data, labels, l2=1e-3, feature_names=None):
    """Minimize mean cross-entropy + l2 * ||w||^2 (bias unpenalized) by L-BFGS."""
    X, names = _as_matrix(data, feature_names)
    y = check_binary(labels)
    fill = np.nanmean(np.where(np.isnan(X).all(axis=0), 0.0, X), axis=0)
    X = np.where(np.isnan(X), fill, X)
    n, d = X.shape

    def fun(theta):
        w, b = theta[:d], theta[d]
        t = X @ w + b
        loss = np.mean(np.logaddexp(0.0, t) - y * t) + l2 * w @ w
        r = (_sigmoid(t) - y) / n
        return loss, np.concatenate([X.T @ r + 2.0 * l2 * w, [r.sum()]])

    res = minimize(fun, np.zeros(d + 1), jac=True, method="L-BFGS-B",
                   options={"maxiter": 5000, "gtol": 1e-10, "ftol": 1e-15})
    return LogRegModel(names, res.x[:d].copy(), float(res.x[d]), fill)
