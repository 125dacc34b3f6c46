"""Ordinary least squares on standardized features."""

from dataclasses import dataclass

import numpy as np

from ._common import as_matrix, check_xy, Standardizer

RIDGE_JITTER = 1e-8


@dataclass(frozen=True)
class LinearModel:
    """Multiple linear regression ``y = b0 + sum_j b_j x_j``.

    ``coef`` and ``intercept`` are expressed in raw feature units; the fit
    itself happens on z-scored columns.
    """

    intercept: float
    coef: np.ndarray
    scaler: Standardizer

    @property
    def n_features(self) -> int:
        return self.coef.shape[0]

    def predict(self, X):
        X, single = as_matrix(X, self.n_features)
        out = self.intercept + X @ self.coef
        return float(out[0]) if single else out

    def to_dict(self) -> dict:
        return {
            "kind": "linear",
            "intercept": self.intercept,
            "coef": self.coef.tolist(),
            "scaler": self.scaler.to_dict(),
        }


def ols_fit(X, y) -> LinearModel:
    """Least-squares fit via normal equations with a tiny ridge term.

    The jitter keeps collinear or constant columns solvable; constant
    columns end up with a zero coefficient.
    """
    X, y = check_xy(X, y, min_rows=1)
    scaler = Standardizer.fit(X)
    Z = scaler.transform(X)
    y_mean = float(y.mean())
    gram = Z.T @ Z + RIDGE_JITTER * np.eye(Z.shape[1])
    beta_std = np.linalg.solve(gram, Z.T @ (y - y_mean)) if Z.shape[1] else np.zeros(0)
    coef = beta_std / scaler.scale
    intercept = y_mean - float(coef @ scaler.mean)
    return LinearModel(intercept=intercept, coef=coef, scaler=scaler)
