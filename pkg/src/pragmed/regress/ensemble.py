"""Bagged regression forests and least-squares gradient boosting."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import DataError, NumericError
from ._tree import build_tree, predict_tree

__all__ = ["Tree", "ForestModel", "BoostModel", "fit_forest", "fit_gboost"]

_NO_LIMIT = 2**62


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_node_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def predict(self, X) -> np.ndarray:
        return predict_tree(X, self.feature, self.threshold, self.left, self.right, self.value)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_node_samples": self.n_node_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        ints = {k: np.asarray(d[k], dtype=np.int64) for k in ("feature", "left", "right", "n_node_samples")}
        return cls(ints["feature"], np.asarray(d["threshold"], dtype=np.float64), ints["left"],
                   ints["right"], np.asarray(d["value"], dtype=np.float64), ints["n_node_samples"])


def _as_xy(X, y, min_rows):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    if X.shape[0] != y.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if X.shape[0] < min_rows:
        raise DataError(f"need at least {min_rows} samples, got {X.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NumericError("non-finite values in X or y")
    return X, y


def _check_predict_input(X, n_features):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != n_features:
        raise DataError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def _grow(X, y, idx, max_depth, min_samples_split, min_samples_leaf, max_features, seed):
    parts = build_tree(X, y, idx.astype(np.int64), int(max_depth), int(min_samples_split),
                       int(min_samples_leaf), int(max_features), np.uint64(seed))
    return Tree(*parts)


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple[Tree, ...]
    n_features: int
    params: dict

    def predict(self, X) -> np.ndarray:
        X = _check_predict_input(X, self.n_features)
        preds = [t.predict(X) for t in self.trees]
        # anchored average keeps constant predictions exact
        base = preds[0]
        acc = np.zeros_like(base)
        for p in preds:
            acc += p - base
        return base + acc / len(preds)

    def to_dict(self) -> dict:
        return {"type": "forest", "n_features": self.n_features, "params": dict(self.params),
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls(tuple(Tree.from_dict(t) for t in d["trees"]), int(d["n_features"]), dict(d["params"]))


def fit_forest(X, y, n_trees: int = 100, min_samples_split: int = 5, max_features=None,
               max_depth=None, min_samples_leaf: int = 1, bootstrap: bool = True,
               seed: int = 0, n_jobs: int = 1) -> ForestModel:
    """Random forest of CART trees.

    Each tree sees a bootstrap resample and considers ``max_features``
    non-constant candidate features per split (default ``max(1, p // 3)``).
    Per-tree seeds are derived from ``seed``, so the result does not depend
    on ``n_jobs``.
    """
    X, y = _as_xy(X, y, 5)
    n, p = X.shape
    mtry = max(1, p // 3) if max_features is None else max(1, min(int(max_features), p))
    depth = _NO_LIMIT if max_depth is None else int(max_depth)
    children = np.random.SeedSequence(seed).spawn(n_trees)

    def one(ss):
        rng = np.random.default_rng(ss)
        idx = rng.integers(0, n, n) if bootstrap else np.arange(n)
        tree_seed = int(rng.integers(0, 2**63 - 1))
        return _grow(X, y, idx, depth, min_samples_split, min_samples_leaf, mtry, tree_seed)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = tuple(pool.map(one, children))
    else:
        trees = tuple(one(ss) for ss in children)
    params = {"n_trees": n_trees, "min_samples_split": min_samples_split, "max_features": mtry,
              "max_depth": max_depth, "min_samples_leaf": min_samples_leaf,
              "bootstrap": bootstrap, "seed": seed}
    return ForestModel(trees, p, params)


@dataclass(frozen=True, eq=False)
class BoostModel:
    init: float
    learning_rate: float
    trees: tuple[Tree, ...]
    n_features: int
    params: dict
    train_loss: tuple[float, ...] = ()

    def predict(self, X) -> np.ndarray:
        X = _check_predict_input(X, self.n_features)
        out = np.full(X.shape[0], self.init)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def to_dict(self) -> dict:
        return {"type": "gboost", "init": self.init, "learning_rate": self.learning_rate,
                "n_features": self.n_features, "params": dict(self.params),
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "BoostModel":
        return cls(float(d["init"]), float(d["learning_rate"]),
                   tuple(Tree.from_dict(t) for t in d["trees"]), int(d["n_features"]), dict(d["params"]))


def fit_gboost(X, y, n_rounds: int = 100, learning_rate: float = 0.1, max_depth: int = 5,
               min_samples_split: int = 2, min_samples_leaf: int = 1, seed: int = 0) -> BoostModel:
    """Stagewise least-squares boosting of shallow trees.

    Starts from the mean of ``y``; each round fits a tree to the current
    residuals and adds ``learning_rate`` times its prediction.
    ``train_loss[r]`` is the training MSE after ``r`` rounds.
    """
    X, y = _as_xy(X, y, 2)
    n, p = X.shape
    init = float(y.mean())
    F = np.full(n, init)
    idx = np.arange(n)
    seeds = np.random.default_rng(seed).integers(0, 2**63 - 1, n_rounds)
    trees = []
    losses = [float(np.mean((y - F) ** 2))]
    for r in range(n_rounds):
        resid = y - F
        tree = _grow(X, resid, idx, max_depth, min_samples_split, min_samples_leaf, p, int(seeds[r]))
        F = F + learning_rate * tree.predict(X)
        trees.append(tree)
        losses.append(float(np.mean((y - F) ** 2)))
    params = {"n_rounds": n_rounds, "learning_rate": learning_rate, "max_depth": max_depth,
              "min_samples_split": min_samples_split, "min_samples_leaf": min_samples_leaf, "seed": seed}
    return BoostModel(init, learning_rate, tuple(trees), p, params, tuple(losses))
