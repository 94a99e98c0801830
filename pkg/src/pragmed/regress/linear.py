"""Penalized linear regression.

The lasso objective is

    (1 / 2n) * sum_i (y_i - b0 - x_i . b)^2 + lam * sum_j w_j |b_j|

with per-column penalty weights ``w_j`` (all 1 by default), solved by cyclic coordinate descent on internally standardized columns
(mean 0, population variance 1). Constant columns are dropped and receive
a zero coefficient. Reported coefficients are on the original scale, while
sparsity is decided on the standardized scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..errors import ConfigError, DataError, NumericError

__all__ = [
    "LinearModel",
    "fit_lasso",
    "cv_lasso",
    "fit_ols",
    "fit_ridge",
    "lasso_kkt_violation",
    "default_lambda_grid",
]

MAX_SWEEPS = 10_000
TOL = 1e-7


def default_lambda_grid(n: int = 20, lo: float = 0.05, hi: float = 1.0) -> np.ndarray:
    """Log-spaced grid on ``[lo, hi]``, ascending."""
    return np.geomspace(lo, hi, n)


@dataclass(frozen=True, eq=False)
class LinearModel:
    intercept: float
    coef: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    kind: str = "lasso"
    lam: float = 0.0
    n_iter: int = 0
    std_coef: np.ndarray = field(default=None)
    penalty_weights: np.ndarray | None = None

    @property
    def n_features(self) -> int:
        return int(self.coef.shape[0])

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.coef != 0.0)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} features, got {X.shape[1]}")
        return self.intercept + X @ self.coef

    def to_dict(self) -> dict:
        return {
            "type": "linear",
            "kind": self.kind,
            "intercept": float(self.intercept),
            "coef": self.coef.tolist(),
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "lam": float(self.lam),
            "penalty_weights": None if self.penalty_weights is None else self.penalty_weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(
            intercept=float(d["intercept"]),
            coef=np.asarray(d["coef"], dtype=np.float64),
            x_mean=np.asarray(d["x_mean"], dtype=np.float64),
            x_scale=np.asarray(d["x_scale"], dtype=np.float64),
            kind=d.get("kind", "lasso"),
            lam=float(d.get("lam", 0.0)),
            penalty_weights=None if d.get("penalty_weights") is None
            else np.asarray(d["penalty_weights"], dtype=np.float64),
        )


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[0] != y.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if X.shape[0] < 2:
        raise DataError("need at least 2 samples")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NumericError("non-finite values in X or y")
    return X, y


def _standardize(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    # columns constant up to rounding are treated as constant
    const = scale <= 1e-12 * np.maximum(1.0, np.abs(mean))
    scale = np.where(const, 1.0, scale)
    return mean, scale, ~const


@njit(cache=True, nogil=True)
def _cd_gram(G, c, lams, beta, tol, max_sweeps):
    p = beta.shape[0]
    # grad = c - G @ beta, maintained incrementally
    grad = c - G @ beta
    for sweep in range(max_sweeps):
        max_change = 0.0
        for j in range(p):
            old = beta[j]
            rho = grad[j] + G[j, j] * old
            lam = lams[j]
            if rho > lam:
                new = (rho - lam) / G[j, j]
            elif rho < -lam:
                new = (rho + lam) / G[j, j]
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                beta[j] = new
                for k in range(p):
                    grad[k] -= G[k, j] * delta
                if abs(delta) > max_change:
                    max_change = abs(delta)
        if max_change < tol:
            return sweep + 1
    return max_sweeps


class _LassoProblem:
    """Standardized design shared across a path of penalties."""

    def __init__(self, X, y, penalty_weights=None):
        self.n = X.shape[0]
        self.x_mean, self.x_scale, self.active = _standardize(X)
        self.pw = None if penalty_weights is None else np.asarray(penalty_weights, dtype=np.float64)
        self.pw_active = np.ones(int(self.active.sum())) if self.pw is None else self.pw[self.active]
        self.y_mean = y.mean()
        Xs = (X[:, self.active] - self.x_mean[self.active]) / self.x_scale[self.active]
        yc = y - self.y_mean
        self.G = np.ascontiguousarray(Xs.T @ Xs / self.n)
        self.c = Xs.T @ yc / self.n
        self.p = X.shape[1]

    def solve(self, lam, beta0=None):
        beta = np.zeros(self.G.shape[0]) if beta0 is None else beta0.copy()
        if beta.shape[0] == 0:
            return beta, 0
        lams = np.where(np.isinf(self.pw_active), np.inf, float(lam) * self.pw_active)
        n_iter = _cd_gram(self.G, self.c, lams, beta, TOL, MAX_SWEEPS)
        return beta, n_iter

    def model(self, beta, lam, n_iter) -> LinearModel:
        std_coef = np.zeros(self.p)
        std_coef[self.active] = beta
        coef = std_coef / self.x_scale
        intercept = self.y_mean - float(self.x_mean @ coef)
        return LinearModel(intercept, coef, self.x_mean, self.x_scale, "lasso", float(lam),
                           int(n_iter), std_coef, self.pw)


def _check_weights(penalty_weights, p):
    if penalty_weights is None:
        return None
    w = np.asarray(penalty_weights, dtype=np.float64).ravel()
    if w.shape != (p,):
        raise ConfigError(f"need {p} penalty weights, got {w.size}")
    if np.any(np.isnan(w)) or np.any(w < 0):
        raise ConfigError("penalty weights must be nonnegative (inf excludes a column)")
    return w


def fit_lasso(X, y, lam: float, penalty_weights=None) -> LinearModel:
    """Lasso by cyclic coordinate descent.

    Stops when the largest coefficient change in a sweep (standardized
    scale) drops below 1e-7, or after 10^4 sweeps. ``penalty_weights``
    scales the penalty per column; an infinite weight keeps that
    coefficient at zero.
    """
    if not np.isfinite(lam) or lam < 0:
        raise ConfigError(f"lambda must be a nonnegative real, got {lam}")
    X, y = _check_xy(X, y)
    prob = _LassoProblem(X, y, _check_weights(penalty_weights, X.shape[1]))
    beta, n_iter = prob.solve(lam)
    return prob.model(beta, lam, n_iter)


def lasso_kkt_violation(model: LinearModel, X, y) -> float:
    """Largest violation of the lasso stationarity conditions (standardized scale)."""
    X, y = _check_xy(X, y)
    mean, scale, active = _standardize(X)
    Xs = (X[:, active] - mean[active]) / scale[active]
    beta = model.std_coef[active]
    r = (y - y.mean()) - Xs @ beta
    grad = Xs.T @ r / X.shape[0]
    pw = np.ones(beta.shape) if model.penalty_weights is None else model.penalty_weights[active]
    lam = np.where(np.isinf(pw), np.inf, model.lam * pw)
    zero = beta == 0.0
    viol_zero = np.maximum(np.abs(grad[zero]) - lam[zero], 0.0)
    viol_nz = np.abs(grad[~zero] - lam[~zero] * np.sign(beta[~zero]))
    return float(max(viol_zero.max(initial=0.0), viol_nz.max(initial=0.0)))


def _kfold(n, k, seed):
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, k)


def cv_lasso(X, y, lambda_grid=None, k: int = 5, seed: int = 0, penalty_weights=None):
    """Choose lambda by k-fold CV, then refit on all rows.

    Ties in mean validation MSE break toward the larger lambda.

    Returns
    -------
    lam_star : float
    model : LinearModel
        Fitted on all of ``X, y`` at ``lam_star``.
    cv_mse : ndarray
        Mean validation MSE per grid value (grid order as given).
    """
    X, y = _check_xy(X, y)
    grid = default_lambda_grid() if lambda_grid is None else np.asarray(lambda_grid, dtype=np.float64).ravel()
    if grid.size == 0:
        raise ConfigError("lambda grid is empty")
    if np.any(grid < 0) or not np.all(np.isfinite(grid)):
        raise ConfigError("lambda grid must hold nonnegative reals")
    n = X.shape[0]
    if k < 2:
        raise ConfigError("need at least 2 folds")
    if n < k:
        raise DataError(f"{n} rows cannot be split into {k} folds")
    pw = _check_weights(penalty_weights, X.shape[1])
    folds = _kfold(n, k, seed)
    desc = np.argsort(-grid, kind="stable")
    sse = np.zeros(grid.size)
    for val_idx in folds:
        train = np.ones(n, bool)
        train[val_idx] = False
        prob = _LassoProblem(X[train], y[train], pw)
        beta = None
        for gi in desc:
            beta, it = prob.solve(grid[gi], beta)
            m = prob.model(beta, grid[gi], it)
            resid = y[val_idx] - m.predict(X[val_idx])
            sse[gi] += float(resid @ resid)
    cv_mse = sse / n
    best = cv_mse.min()
    tied = np.flatnonzero(cv_mse <= best + 1e-12 * max(1.0, abs(best)))
    lam_star = float(grid[tied].max())
    return lam_star, fit_lasso(X, y, lam_star, pw), cv_mse


def fit_ridge(X, y, lam: float = 1.0) -> LinearModel:
    """Ridge on standardized columns, same 1/(2n) scaling as the lasso."""
    if lam < 0:
        raise ConfigError("ridge penalty must be nonnegative")
    X, y = _check_xy(X, y)
    mean, scale, active = _standardize(X)
    Xs = (X[:, active] - mean[active]) / scale[active]
    yc = y - y.mean()
    n = X.shape[0]
    A = Xs.T @ Xs / n + lam * np.eye(Xs.shape[1])
    if lam > 0:
        beta = np.linalg.solve(A, Xs.T @ yc / n)
    else:
        beta = np.linalg.lstsq(Xs, yc, rcond=None)[0]
    std_coef = np.zeros(X.shape[1])
    std_coef[active] = beta
    coef = std_coef / scale
    return LinearModel(float(y.mean() - mean @ coef), coef, mean, scale,
                       "ridge" if lam > 0 else "ols", float(lam), 0, std_coef)


def fit_ols(X, y) -> LinearModel:
    """Least squares with intercept (minimum-norm for rank-deficient designs)."""
    return fit_ridge(X, y, 0.0)
