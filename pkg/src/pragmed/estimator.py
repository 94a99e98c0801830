"""Two-stage causal response estimator.

Stage one learns ``g_i(w, z) = E[phi_i(X, Z) | w, z]`` for every feature
with a black-box regressor on the pooled historic data. Stage two fits an
L1-penalized linear model of ``y`` on the stage-one predictions. For an
unseen regime only stage one is refitted (on unlabeled rows), and::

    E[Y | do(w), z] = theta0 + sum_i theta_i * g_i*(w, z)

Stage two ranks coefficients by feature name internally, so permuting the
feature library permutes ``theta`` and leaves predictions bitwise unchanged.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import Dataset, concat
from .errors import ConfigError, ContractError, DataError, NumericError
from .features import FeatureLibrary, load_manifest, save_manifest
from .regress import (
    MultiOutputModel,
    RegressorSpec,
    cv_lasso,
    default_lambda_grid,
    fit_multi_output,
    fit_ols,
    model_from_dict,
)

__all__ = [
    "StageOneModel",
    "CausalResponseModel",
    "fit_stage_one",
    "stage_one_oof",
    "fit_stage_two",
    "adapt_stage_one",
    "predict_do",
    "predict_do_batch",
    "save_pipeline",
    "load_pipeline",
]

_FORMAT = "pragmed-pipeline"
_VERSION = 1


def _pool(historic) -> Dataset:
    if isinstance(historic, Dataset):
        historic = [historic]
    historic = list(historic)
    if not historic:
        raise DataError("empty historic pool")
    if not all(h.labeled for h in historic):
        raise DataError("historic datasets must be labeled")
    pooled = concat(historic) if len(historic) > 1 else historic[0]
    if pooled.n == 0:
        raise DataError("empty historic pool")
    return pooled


def _design(W, Z, d_w, d_z, z_columns) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if W.ndim == 1:
        W = W.reshape(-1, 1) if d_w == 1 else W.reshape(1, -1)
    if Z.ndim == 1:
        Z = Z.reshape(1, -1) if d_z > 1 or W.shape[0] == 1 else Z.reshape(-1, 1)
    if W.shape[1] != d_w or Z.shape[1] != d_z:
        raise DataError(f"expected w of width {d_w} and z of width {d_z}, "
                        f"got {W.shape[1]} and {Z.shape[1]}")
    if W.shape[0] != Z.shape[0]:
        raise DataError("w and z have different row counts")
    if z_columns is not None:
        Z = Z[:, list(z_columns)]
    return np.hstack([W, Z])


@dataclass(frozen=True, eq=False)
class StageOneModel:
    """Fitted ``g_hat``: one regressor per feature on inputs ``(w, z[z_columns])``."""

    model: MultiOutputModel
    d_w: int
    d_z: int
    z_columns: tuple[int, ...] | None
    feature_names: tuple[str, ...]

    @property
    def d(self) -> int:
        return len(self.feature_names)

    @property
    def spec(self) -> RegressorSpec:
        return self.model.spec

    def design(self, W, Z) -> np.ndarray:
        return _design(W, Z, self.d_w, self.d_z, self.z_columns)

    def predict_g(self, W, Z) -> np.ndarray:
        """``(n, d)`` matrix of stage-one predictions."""
        G = self.model.predict(self.design(W, Z))
        if not np.all(np.isfinite(G)):
            raise NumericError("stage-one predictions are not finite")
        return G

    def predict_dataset(self, data: Dataset) -> np.ndarray:
        return self.predict_g(data.w, data.z)

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "d_w": self.d_w, "d_z": self.d_z,
                "z_columns": None if self.z_columns is None else list(self.z_columns),
                "feature_names": list(self.feature_names)}

    @classmethod
    def from_dict(cls, d: dict) -> "StageOneModel":
        zc = d.get("z_columns")
        return cls(model_from_dict(d["model"]), int(d["d_w"]), int(d["d_z"]),
                   None if zc is None else tuple(int(c) for c in zc),
                   tuple(d["feature_names"]))


def _check_z_columns(z_columns, d_z):
    if z_columns is None:
        return None
    zc = tuple(int(c) for c in z_columns)
    if any(c < 0 or c >= d_z for c in zc):
        raise ConfigError(f"z_columns {zc} out of range for z of width {d_z}")
    return zc


def _fit_g(data: Dataset, lib: FeatureLibrary, spec, z_columns, n_jobs) -> StageOneModel:
    spec = RegressorSpec(spec) if isinstance(spec, str) else spec
    zc = _check_z_columns(z_columns, data.d_z)
    Phi = lib.evaluate_dataset(data)
    X = _design(data.w, data.z, data.d_w, data.d_z, zc)
    model = fit_multi_output(X, Phi, spec, n_jobs=n_jobs)
    return StageOneModel(model, data.d_w, data.d_z, zc, tuple(lib.names))


def fit_stage_one(historic, lib: FeatureLibrary, spec: RegressorSpec | str = "forest",
                  z_columns: Sequence[int] | None = None, n_jobs: int = 1) -> StageOneModel:
    """Regress each ``phi_i(x, z)`` on ``(w, z)`` over the pooled historic rows.

    Parameters
    ----------
    historic : Dataset or sequence of Dataset
        Labeled historic regimes; pooled without weighting.
    lib : FeatureLibrary
    spec : RegressorSpec or str
        Learner used for every feature.
    z_columns : sequence of int, optional
        Restrict the learners to these columns of ``z`` (all by default).
    n_jobs : int
        Threads used across outputs.
    """
    return _fit_g(_pool(historic), lib, spec, z_columns, n_jobs)


def _folds(n: int, k: int, seed: int) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def stage_one_oof(data: Dataset, lib: FeatureLibrary, spec, z_columns=None, k: int = 5,
                  seed: int = 0, n_jobs: int = 1) -> np.ndarray:
    """Out-of-fold stage-one predictions: row ``i`` is predicted by a model that never saw it."""
    if k < 2:
        raise ConfigError("need at least 2 folds")
    if data.n < k:
        raise DataError(f"{data.n} rows cannot be split into {k} folds")
    G = np.empty((data.n, lib.d))
    for fold in _folds(data.n, k, seed):
        mask = np.ones(data.n, dtype=bool)
        mask[fold] = False
        g = _fit_g(data.take(np.flatnonzero(mask)), lib, spec, z_columns, n_jobs)
        G[fold] = g.predict_dataset(data.take(fold))
    return G


@dataclass(frozen=True, eq=False)
class CausalResponseModel:
    """Outcome model ``y = theta0 + theta . g``."""

    theta0: float
    theta: np.ndarray
    lambda_star: float
    feature_names: tuple[str, ...]
    refit: bool = True
    cv_mse: np.ndarray | None = None
    lambda_grid: np.ndarray | None = None
    penalty: str = "adaptive"

    def __post_init__(self):
        th = np.array(self.theta, dtype=np.float64).ravel()
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if th.size != len(self.feature_names):
            raise DataError("theta and feature names differ in length")

    @property
    def d(self) -> int:
        return self.theta.size

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.theta != 0.0)

    def selected(self) -> list[str]:
        return [self.feature_names[i] for i in self.support]

    def predict(self, G) -> np.ndarray:
        """``theta0 + G @ theta``, summed over features in name order."""
        G = np.asarray(G, dtype=np.float64)
        if G.ndim == 1:
            G = G.reshape(1, -1)
        if G.shape[1] != self.d:
            raise DataError(f"expected {self.d} stage-one columns, got {G.shape[1]}")
        out = np.full(G.shape[0], self.theta0)
        for i in sorted(range(self.d), key=lambda j: self.feature_names[j]):
            if self.theta[i] != 0.0:
                out = out + self.theta[i] * G[:, i]
        return out

    def to_dict(self) -> dict:
        return {
            "theta0": float(self.theta0),
            "theta": {n: float(t) for n, t in zip(self.feature_names, self.theta)},
            "feature_order": list(self.feature_names),
            "lambda_star": float(self.lambda_star),
            "refit": bool(self.refit),
            "penalty": self.penalty,
            "support": self.selected(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CausalResponseModel":
        names = tuple(d["feature_order"])
        return cls(float(d["theta0"]), np.array([d["theta"][n] for n in names]),
                   float(d["lambda_star"]), names, bool(d.get("refit", True)),
                   penalty=d.get("penalty", "adaptive"))


def _pilot_weights(G, y) -> np.ndarray:
    """Penalty weights ``1 / |t_j|`` from a least-squares pilot fit.

    Columns that are constant, or aliased with others, get an infinite
    weight and stay out of the model.
    """
    n, p = G.shape
    pw = np.full(p, np.inf)
    sd = G.std(axis=0)
    keep = np.flatnonzero(sd > 1e-12 * np.maximum(1.0, np.abs(G.mean(axis=0))))
    if keep.size == 0 or n <= keep.size + 1:
        return np.where(sd > 0, 1.0, np.inf)
    Xs = (G[:, keep] - G[:, keep].mean(axis=0)) / sd[keep]
    yc = y - y.mean()
    b, _, rank, _ = np.linalg.lstsq(Xs, yc, rcond=None)
    if rank < keep.size:
        return np.where(sd > 0, 1.0, np.inf)
    r = yc - Xs @ b
    s2 = float(r @ r) / (n - keep.size - 1)
    cov = np.linalg.inv(Xs.T @ Xs)
    se = np.sqrt(np.maximum(s2 * np.diag(cov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.abs(b) / se
    pw[keep] = np.where(t > 0, 1.0 / t, np.inf)
    return pw


def fit_stage_two(g_hat: StageOneModel, data, lib: FeatureLibrary | None = None,
                  lambda_grid=None, k_folds: int = 5, out_of_fold: bool = True,
                  refit: bool = True, penalty: str = "adaptive", seed: int = 0, G=None,
                  n_jobs: int = 1) -> CausalResponseModel:
    """L1 regression of ``y`` on the stage-one predictions.

    Parameters
    ----------
    g_hat : StageOneModel
        Stage-one fit on ``data``; its spec is reused for out-of-fold fits.
    data : Dataset or sequence of Dataset
        The pooled labeled historic data ``g_hat`` was fitted on.
    lib : FeatureLibrary
        Needed when ``out_of_fold`` is set.
    lambda_grid : array_like, optional
        Penalties for cross-validation; defaults to 20 log-spaced values in
        ``[0.05, 1]``.
    k_folds : int
        Folds for the lambda search and for the out-of-fold predictions.
    out_of_fold : bool
        Regress on out-of-fold ``g`` (default) rather than in-sample ``g_hat``.
    refit : bool
        After selecting the support at ``lambda_star``, refit its
        coefficients by least squares (relaxed lasso). Off gives the plain
        penalized estimate.
    penalty : {"adaptive", "l1"}
        ``adaptive`` weights each column's penalty by ``1 / |t_j|``, the
        inverse t-statistic of a least-squares pilot fit, so well-supported
        columns are barely shrunk and weak ones (including small
        coefficients leaked through correlated columns) drop out.
        ``l1`` is the unweighted lasso.
    G : array_like, optional
        Use these regressors instead of stage-one predictions, e.g. the
        closed-form conditional expectations of a simulator.

    Returns
    -------
    CausalResponseModel
    """
    data = _pool(data)
    if data.n < k_folds:
        raise DataError(f"{data.n} rows are fewer than {k_folds} folds")
    names = g_hat.feature_names if g_hat is not None else tuple(lib.names)
    if G is None:
        if out_of_fold:
            if lib is None:
                raise ConfigError("out-of-fold stage two needs the feature library")
            if tuple(lib.names) != names:
                raise DataError("feature library does not match the stage-one model")
            G = stage_one_oof(data, lib, g_hat.spec, g_hat.z_columns, k_folds, seed, n_jobs)
        else:
            G = g_hat.predict_dataset(data)
    G = np.asarray(G, dtype=np.float64)
    if G.shape != (data.n, len(names)):
        raise DataError(f"regressor matrix has shape {G.shape}, expected {(data.n, len(names))}")
    grid = default_lambda_grid() if lambda_grid is None else np.asarray(lambda_grid, dtype=np.float64)

    # canonical column order so results do not depend on library order
    order = np.array(sorted(range(len(names)), key=lambda j: names[j]), dtype=np.int64)
    Gc = G[:, order]
    if penalty == "adaptive":
        pw = _pilot_weights(Gc, data.y)
    elif penalty == "l1":
        pw = None
    else:
        raise ConfigError(f"unknown penalty {penalty!r}; use 'adaptive' or 'l1'")
    lam, lasso, cv_mse = cv_lasso(Gc, data.y, grid, k=k_folds, seed=seed, penalty_weights=pw)
    coef_c = np.asarray(lasso.coef, dtype=np.float64).copy()
    theta0 = float(lasso.intercept)
    if refit:
        sup = np.flatnonzero(coef_c != 0.0)
        coef_c[:] = 0.0
        if sup.size:
            ols = fit_ols(Gc[:, sup], data.y)
            coef_c[sup] = ols.coef
            theta0 = float(ols.intercept)
        else:
            theta0 = float(np.mean(data.y))
    theta = np.zeros(len(names))
    theta[order] = coef_c
    if not (np.all(np.isfinite(theta)) and np.isfinite(theta0)):
        raise NumericError("stage-two coefficients are not finite")
    return CausalResponseModel(theta0, theta, float(lam), names, refit, np.asarray(cv_mse), grid, penalty)


def adapt_stage_one(template: StageOneModel | RegressorSpec | str, new_unlabeled: Dataset,
                    lib: FeatureLibrary, z_columns: Sequence[int] | None = None,
                    n_jobs: int = 1) -> StageOneModel:
    """Refit stage one on unlabeled rows of a single new regime.

    ``template`` supplies the learner spec (and ``z_columns`` when it is a
    fitted model). Labeled input is refused: adaptation must not see ``y``.
    """
    if new_unlabeled.labeled:
        raise ContractError("adaptation takes unlabeled data; strip y before calling")
    if new_unlabeled.n == 0:
        raise DataError("no new-regime rows to adapt on")
    if len(new_unlabeled.regimes()) > 1:
        raise DataError("new-regime data must be homogeneous in regime")
    if isinstance(template, StageOneModel):
        spec = template.spec
        if z_columns is None:
            z_columns = template.z_columns
        if tuple(lib.names) != template.feature_names:
            raise DataError("feature library does not match the stage-one model")
        if (template.d_w, template.d_z) != (new_unlabeled.d_w, new_unlabeled.d_z):
            raise DataError("new-regime layout differs from the historic one")
    else:
        spec = template
    return _fit_g(new_unlabeled, lib, spec, z_columns, n_jobs)


def predict_do_batch(crm: CausalResponseModel, g_star: StageOneModel, W, Z) -> np.ndarray:
    """Estimates of ``E[Y | do(w), z]`` for each row of ``(W, Z)``."""
    if g_star.feature_names != crm.feature_names:
        raise DataError("stage-one and stage-two feature names disagree")
    return crm.predict(g_star.predict_g(W, Z))


def predict_do(crm: CausalResponseModel, g_star: StageOneModel, w, z) -> float:
    """Estimate of ``E[Y | do(w), z]`` for one ``(w, z)``."""
    w = np.asarray(w, dtype=np.float64).reshape(1, -1)
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    return float(predict_do_batch(crm, g_star, w, z)[0])


# ---------------------------------------------------------------------------
# Persistence

def save_pipeline(outdir, g: StageOneModel, crm: CausalResponseModel | None,
                  lib: FeatureLibrary) -> None:
    """Write ``stage_one.json``, ``stage_two.json`` (if any) and ``features.json``."""
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "stage_one.json"), "w", encoding="utf-8") as fh:
        json.dump({"format": _FORMAT, "version": _VERSION, "stage_one": g.to_dict()}, fh)
    if crm is not None:
        with open(os.path.join(outdir, "stage_two.json"), "w", encoding="utf-8") as fh:
            json.dump({"format": _FORMAT, "version": _VERSION, "stage_two": crm.to_dict()},
                      fh, indent=1)
    save_manifest(lib, os.path.join(outdir, "features.json"))


def _read(path, key):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"missing model file {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if doc.get("format") != _FORMAT or doc.get("version") != _VERSION:
        raise ConfigError(f"{path}: not a version-{_VERSION} pipeline file")
    return doc[key]


def load_pipeline(indir) -> tuple[StageOneModel, CausalResponseModel | None, FeatureLibrary]:
    g = StageOneModel.from_dict(_read(os.path.join(indir, "stage_one.json"), "stage_one"))
    p2 = os.path.join(indir, "stage_two.json")
    crm = CausalResponseModel.from_dict(_read(p2, "stage_two")) if os.path.exists(p2) else None
    lib = load_manifest(os.path.join(indir, "features.json"))
    return g, crm, lib
