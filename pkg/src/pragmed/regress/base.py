"""Learner specs, dispatch, multi-output wrapper and JSON serialization."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np

from ..errors import ConfigError, DataError
from .ensemble import BoostModel, ForestModel, fit_forest, fit_gboost
from .linear import LinearModel, cv_lasso, fit_lasso, fit_ols, fit_ridge

__all__ = [
    "KINDS",
    "DEFAULTS",
    "RegressorSpec",
    "FittedRegressor",
    "MultiOutputModel",
    "fit_regressor",
    "fit_multi_output",
    "model_to_dict",
    "model_from_dict",
    "dumps_model",
    "loads_model",
    "FORMAT_VERSION",
]

FORMAT_VERSION = 1

KINDS = ("ols", "ridge", "lasso", "forest", "gboost")

#: Documented defaults per learner kind. ``lasso`` with ``lam=None``
#: selects the penalty by k-fold CV over ``grid``.
DEFAULTS: dict[str, dict[str, Any]] = {
    "ols": {},
    "ridge": {"lam": 1.0},
    "lasso": {"lam": None, "grid": None, "folds": 5, "seed": 0},
    "forest": {"n_trees": 100, "min_samples_split": 5, "max_features": None,
               "max_depth": None, "min_samples_leaf": 1, "seed": 0},
    "gboost": {"n_rounds": 100, "learning_rate": 0.1, "max_depth": 5,
               "min_samples_split": 2, "min_samples_leaf": 1, "seed": 0},
}


class FittedRegressor(Protocol):
    n_features: int

    def predict(self, X) -> np.ndarray: ...

    def to_dict(self) -> dict: ...


@dataclass(frozen=True)
class RegressorSpec:
    kind: str = "forest"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown learner kind {self.kind!r}; choose from {KINDS}")
        unknown = set(self.params) - set(DEFAULTS[self.kind]) - {"n_jobs"}
        if unknown:
            raise ConfigError(f"unknown parameters for {self.kind}: {sorted(unknown)}")

    def resolved(self) -> dict:
        out = dict(DEFAULTS[self.kind])
        out.update(self.params)
        return out

    def with_seed(self, seed: int) -> "RegressorSpec":
        if "seed" not in DEFAULTS[self.kind]:
            return self
        return RegressorSpec(self.kind, {**self.params, "seed": int(seed)})

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": _jsonable(self.params)}

    @classmethod
    def from_dict(cls, d: dict | str) -> "RegressorSpec":
        if isinstance(d, str):
            return cls(d)
        return cls(d.get("kind", "forest"), dict(d.get("params", {})))


def _jsonable(params):
    out = {}
    for k, v in params.items():
        out[k] = v.tolist() if isinstance(v, np.ndarray) else v
    return out


def fit_regressor(X, y, spec: RegressorSpec | str = "forest", n_jobs: int = 1) -> FittedRegressor:
    if isinstance(spec, str):
        spec = RegressorSpec(spec)
    p = spec.resolved()
    p.pop("n_jobs", None)
    if spec.kind == "ols":
        return fit_ols(X, y)
    if spec.kind == "ridge":
        return fit_ridge(X, y, p["lam"])
    if spec.kind == "lasso":
        if p["lam"] is None:
            return cv_lasso(X, y, p["grid"], k=p["folds"], seed=p["seed"])[1]
        return fit_lasso(X, y, p["lam"])
    if spec.kind == "forest":
        return fit_forest(X, y, n_jobs=n_jobs, **p)
    return fit_gboost(X, y, **p)


@dataclass(frozen=True, eq=False)
class MultiOutputModel:
    """``d`` independent single-output regressors sharing one spec."""

    models: tuple
    spec: RegressorSpec

    @property
    def n_outputs(self) -> int:
        return len(self.models)

    @property
    def n_features(self) -> int:
        return self.models[0].n_features

    def predict(self, X) -> np.ndarray:
        return np.column_stack([m.predict(X) for m in self.models])

    def to_dict(self) -> dict:
        return {"type": "multi", "spec": self.spec.to_dict(),
                "models": [model_to_dict(m) for m in self.models]}

    @classmethod
    def from_dict(cls, d: dict) -> "MultiOutputModel":
        return cls(tuple(model_from_dict(m) for m in d["models"]), RegressorSpec.from_dict(d["spec"]))


def fit_multi_output(X, Y, spec: RegressorSpec | str = "forest", n_jobs: int = 1) -> MultiOutputModel:
    """Fit one regressor per column of ``Y``.

    Every column is fitted with the same spec (including its seed), so
    permuting the columns of ``Y`` permutes the fitted models and nothing
    else.
    """
    if isinstance(spec, str):
        spec = RegressorSpec(spec)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if Y.shape[1] == 0:
        raise DataError("need at least one output column")
    if X.shape[0] != Y.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")

    def one(j):
        return fit_regressor(X, Y[:, j], spec)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            models = tuple(pool.map(one, range(Y.shape[1])))
    else:
        models = tuple(one(j) for j in range(Y.shape[1]))
    return MultiOutputModel(models, spec)


_LOADERS = {
    "linear": LinearModel.from_dict,
    "forest": ForestModel.from_dict,
    "gboost": BoostModel.from_dict,
    "multi": MultiOutputModel.from_dict,
}


def model_to_dict(model) -> dict:
    return model.to_dict()


def model_from_dict(d: dict):
    try:
        loader = _LOADERS[d["type"]]
    except KeyError:
        raise ConfigError(f"unknown model type {d.get('type')!r}") from None
    return loader(d)


def dumps_model(model) -> str:
    return json.dumps({"format": "pragmed-model", "version": FORMAT_VERSION,
                       "model": model_to_dict(model)})


def loads_model(text: str):
    doc = json.loads(text)
    if doc.get("format") != "pragmed-model":
        raise ConfigError("not a pragmed model document")
    if doc.get("version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported model format version {doc.get('version')}")
    return model_from_dict(doc["model"])
