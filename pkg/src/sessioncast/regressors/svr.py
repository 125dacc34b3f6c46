"""Epsilon-insensitive support vector regression solved by SMO."""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _treecore
from ._common import Standardizer, as_matrix, check_xy

logger = logging.getLogger(__name__)

DEFAULT_ROW_CAP = 5000
KKT_TOL = 1e-3
# linear kernels with large C converge slowly; past this the fit is used as is
DEFAULT_MAX_ITER = 200_000


class Kernel(str, Enum):
    RBF = "rbf"
    LINEAR = "linear"


def kernel_matrix(A: np.ndarray, B: np.ndarray, kernel: Kernel, gamma: float) -> np.ndarray:
    if kernel is Kernel.LINEAR:
        return A @ B.T
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


@dataclass(frozen=True)
class SvrModel:
    support: np.ndarray      # standardized support-vector rows
    dual_coef: np.ndarray    # alpha - alpha_star per support vector
    bias: float
    kernel: Kernel
    gamma: float
    C: float
    epsilon: float
    scaler: Standardizer
    n_iter: int = 0
    objective: float = 0.0

    @property
    def n_features(self) -> int:
        return self.scaler.mean.shape[0]

    def predict(self, X):
        X, single = as_matrix(X, self.n_features)
        if self.support.shape[0] == 0:
            out = np.full(X.shape[0], self.bias)
        else:
            K = kernel_matrix(self.scaler.transform(X), self.support, self.kernel, self.gamma)
            out = K @ self.dual_coef + self.bias
        return float(out[0]) if single else out

    def to_dict(self) -> dict:
        return {
            "kind": "svr",
            "kernel": self.kernel.value,
            "gamma": self.gamma,
            "C": self.C,
            "epsilon": self.epsilon,
            "bias": self.bias,
            "n_support": int(self.support.shape[0]),
            "dual_coef": self.dual_coef.tolist(),
            "support": self.support.tolist(),
            "scaler": self.scaler.to_dict(),
        }


def subsample_rows(n: int, row_cap, seed: int):
    """Sorted row indices kept under ``row_cap``, or ``None`` when all rows stay."""
    if row_cap is None or n <= row_cap:
        return None
    return np.sort(np.random.default_rng(seed).choice(n, row_cap, replace=False))


@dataclass(frozen=True)
class SvrData:
    """Standardized (and possibly subsampled) training rows ready for SMO."""

    Z: np.ndarray
    y: np.ndarray
    scaler: Standardizer


def prepare(X, y, row_cap=DEFAULT_ROW_CAP, seed=0) -> SvrData:
    X, y = check_xy(X, y, min_rows=2)
    idx = subsample_rows(X.shape[0], row_cap, seed)
    if idx is not None:
        X, y = X[idx], y[idx]
    scaler = Standardizer.fit(X)
    return SvrData(Z=np.ascontiguousarray(scaler.transform(X)), y=y, scaler=scaler)


def _check_params(C, gamma, epsilon, kernel):
    kernel = Kernel(kernel)
    if C <= 0 or epsilon < 0 or (kernel is Kernel.RBF and gamma <= 0):
        raise ValueError(f"invalid SVR hyperparameters C={C} gamma={gamma} epsilon={epsilon}")
    return kernel


def fit_prepared(data: SvrData, C=1.0, gamma=0.1, epsilon=0.1, kernel=Kernel.RBF,
                 tol=KKT_TOL, max_iter=None, gram=None) -> SvrModel:
    """Solve the dual on prepared rows; ``gram`` may be shared across calls."""
    kernel = _check_params(C, gamma, epsilon, kernel)
    Z = data.Z
    K = gram if gram is not None else kernel_matrix(Z, Z, kernel, gamma)
    if max_iter is None:
        max_iter = max(DEFAULT_MAX_ITER, 100 * Z.shape[0])
    coef, rho, n_iter, obj = _treecore.smo_epsilon_svr(
        np.ascontiguousarray(K), data.y, float(C), float(epsilon), float(tol), int(max_iter))
    if n_iter >= max_iter:
        logger.warning("SMO hit max_iter=%d before reaching tolerance %g", max_iter, tol)
    sv = np.abs(coef) > 1e-12
    return SvrModel(support=Z[sv], dual_coef=coef[sv], bias=-rho, kernel=kernel,
                    gamma=float(gamma), C=float(C), epsilon=float(epsilon), scaler=data.scaler,
                    n_iter=int(n_iter), objective=float(obj))


def svr_fit(X, y, C=1.0, gamma=0.1, epsilon=0.1, kernel=Kernel.RBF,
            row_cap=DEFAULT_ROW_CAP, seed=0, tol=KKT_TOL, max_iter=None) -> SvrModel:
    """Fit an epsilon-SVR by solving its dual with pairwise SMO.

    Rows beyond ``row_cap`` are handled by a seeded uniform subsample.
    """
    _check_params(C, gamma, epsilon, kernel)
    return fit_prepared(prepare(X, y, row_cap, seed), C, gamma, epsilon, kernel, tol, max_iter)
