"""Candidate-mediator libraries.

A :class:`FeatureLibrary` is an ordered, named collection of functions
``phi_i(x, z) -> float``. Libraries evaluate row-wise on ``(X, Z)`` blocks
and round-trip through a JSON manifest so command-line runs can reference
them declaratively::

    {"format": "pragmed-features", "version": 1,
     "features": [
        {"name": "phi1", "kind": "convolution", "quadrant": 0,
         "t_column": 100, "bank": {"seed": 1234, "side": 10}},
        {"name": "xz", "kind": "product",
         "x": {"fn": "x_index", "index": 0}, "z": {"fn": "z_index", "index": 1}},
        {"name": "x2", "kind": "builtin", "fn": "x_index", "index": 2}
     ]}

Builtin functions: ``x_index``, ``z_index`` (a single coordinate),
``linear_x``, ``linear_z`` (dot product with ``weights``) and ``constant``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericError

__all__ = [
    "Feature",
    "Builtin",
    "ProductFeature",
    "ConvBank",
    "QuadrantConvFeature",
    "FeatureLibrary",
    "OracleEstimate",
    "eval_features",
    "quadrant_convolution",
    "conditional_expectation_oracle",
    "identity_library",
    "quadrant_library",
    "load_manifest",
    "save_manifest",
]


class Feature(Protocol):
    name: str

    def evaluate(self, X: np.ndarray, Z: np.ndarray) -> np.ndarray: ...

    def to_dict(self) -> dict: ...


_BUILTINS = ("x_index", "z_index", "linear_x", "linear_z", "constant")


@dataclass(frozen=True, eq=False)
class Builtin:
    name: str
    fn: str
    index: int = 0
    weights: np.ndarray | None = None
    value: float = 0.0

    def __post_init__(self):
        if self.fn not in _BUILTINS:
            raise ConfigError(f"unknown builtin feature {self.fn!r}")
        if self.fn.startswith("linear") and self.weights is None:
            raise ConfigError(f"{self.fn} needs weights")
        if self.weights is not None:
            w = np.array(self.weights, dtype=np.float64).ravel()
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @property
    def block(self) -> str | None:
        if self.fn == "constant":
            return None
        return "x" if self.fn.endswith("_x") or self.fn == "x_index" else "z"

    def evaluate(self, X, Z):
        src = X if self.block == "x" else Z
        if self.fn == "constant":
            return np.full(X.shape[0], float(self.value))
        if self.fn.endswith("_index"):
            if self.index >= src.shape[1]:
                raise DataError(f"{self.name}: index {self.index} out of range for width {src.shape[1]}")
            return src[:, self.index].copy()
        if self.weights.shape[0] != src.shape[1]:
            raise DataError(f"{self.name}: weights of length {self.weights.shape[0]} "
                            f"do not match width {src.shape[1]}")
        return src @ self.weights

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": "builtin", "fn": self.fn}
        if self.fn.endswith("_index"):
            d["index"] = int(self.index)
        elif self.fn == "constant":
            d["value"] = float(self.value)
        else:
            d["weights"] = self.weights.tolist()
        return d


@dataclass(frozen=True, eq=False)
class ProductFeature:
    """``phi(x, z) = phi_x(x) * phi_z(z)``.

    For such features ``E[phi | w, z] = phi_z(z) * E[phi_x(X) | w, z]``.
    """

    name: str
    x_part: Builtin
    z_part: Builtin

    def __post_init__(self):
        if self.x_part.block == "z" or self.z_part.block == "x":
            raise ConfigError(f"{self.name}: product parts must depend on x and z respectively")

    def evaluate(self, X, Z):
        return self.x_part.evaluate(X, Z) * self.z_part.evaluate(X, Z)

    def to_dict(self) -> dict:
        strip = lambda b: {k: v for k, v in b.to_dict().items() if k not in ("name", "kind")}  # noqa: E731
        return {"name": self.name, "kind": "product", "x": strip(self.x_part), "z": strip(self.z_part)}


@dataclass(frozen=True, eq=False)
class ConvBank:
    """Five 5x5 kernels, one per pattern index, applied to each image quadrant.

    Weights are drawn i.i.d. from Unif(0, 1) with ``seed``; the bank is a
    pure function of ``(seed, side, n_kernels)``. Quadrants are numbered
    0 = top-left, 1 = top-right, 2 = bottom-left, 3 = bottom-right, with
    images flattened row-major.
    """

    seed: int = 20210
    side: int = 10
    n_kernels: int = 5
    kernels: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.side % 2:
            raise ConfigError("image side must be even")
        if self.kernels is None:
            half = self.side // 2
            k = np.random.default_rng(self.seed).uniform(0.0, 1.0, (self.n_kernels, half, half))
        else:
            k = np.array(self.kernels, dtype=np.float64)
        k.setflags(write=False)
        object.__setattr__(self, "kernels", k)

    @property
    def half(self) -> int:
        return self.side // 2

    def quadrant_slices(self, q: int) -> tuple[slice, slice]:
        h = self.half
        r, c = divmod(q, 2)
        return slice(r * h, (r + 1) * h), slice(c * h, (c + 1) * h)

    def to_dict(self) -> dict:
        return {"seed": int(self.seed), "side": int(self.side), "n_kernels": int(self.n_kernels)}


def _check_t(t, n_kernels):
    t = np.asarray(t)
    ti = np.rint(t).astype(np.int64)
    if np.any(ti != t) or np.any(ti < 0) or np.any(ti >= n_kernels):
        raise DataError(f"pattern index out of range 0..{n_kernels - 1}")
    return ti


def quadrant_convolution(bank: ConvBank, x, t: int) -> np.ndarray:
    """The four kernel-weighted quadrant sums of one ``side x side`` image."""
    img = np.asarray(x, dtype=np.float64)
    if img.size != bank.side**2:
        raise DataError(f"expected a {bank.side}x{bank.side} image, got {img.size} values")
    img = img.reshape(bank.side, bank.side)
    kern = bank.kernels[int(_check_t(t, bank.n_kernels))]
    out = np.empty(4)
    for q in range(4):
        rs, cs = bank.quadrant_slices(q)
        out[q] = float(np.sum(kern * img[rs, cs]))
    return out


def _quadrant_sums(bank: ConvBank, X: np.ndarray, t: np.ndarray, q: int) -> np.ndarray:
    h, s = bank.half, bank.side
    rs, cs = bank.quadrant_slices(q)
    imgs = X.reshape(-1, s, s)[:, rs, cs].reshape(-1, h * h)
    kern = bank.kernels.reshape(bank.n_kernels, h * h)[t]
    return np.einsum("ij,ij->i", imgs, kern)


@dataclass(frozen=True, eq=False)
class QuadrantConvFeature:
    name: str
    bank: ConvBank
    quadrant: int
    t_column: int

    def __post_init__(self):
        if self.quadrant not in (0, 1, 2, 3):
            raise ConfigError("quadrant must be 0..3")

    def evaluate(self, X, Z):
        if X.shape[1] != self.bank.side**2:
            raise DataError(f"{self.name}: x must hold {self.bank.side**2} pixels, got {X.shape[1]}")
        if self.t_column >= Z.shape[1]:
            raise DataError(f"{self.name}: z has no column {self.t_column}")
        t = _check_t(Z[:, self.t_column], self.bank.n_kernels)
        return _quadrant_sums(self.bank, X, t, self.quadrant)

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": "convolution", "quadrant": int(self.quadrant),
                "t_column": int(self.t_column), "bank": self.bank.to_dict()}


class FeatureLibrary:
    """Ordered collection of named features; immutable after construction."""

    def __init__(self, features: Sequence[Feature]):
        features = tuple(features)
        if not features:
            raise ConfigError("a feature library needs at least one feature")
        names = [f.name for f in features]
        if len(set(names)) != len(names):
            raise ConfigError(f"feature names must be unique: {names}")
        self._features = features

    @property
    def features(self) -> tuple[Feature, ...]:
        return self._features

    @property
    def names(self) -> list[str]:
        return [f.name for f in self._features]

    @property
    def d(self) -> int:
        return len(self._features)

    def __len__(self) -> int:
        return self.d

    def subset(self, idx: Sequence[int]) -> "FeatureLibrary":
        return FeatureLibrary([self._features[i] for i in idx])

    def evaluate(self, X, Z) -> np.ndarray:
        """Evaluate every feature on each row of ``(X, Z)``; returns ``(n, d)``."""
        X = np.asarray(X, dtype=np.float64)
        Z = np.asarray(Z, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if Z.ndim == 1:
            Z = Z.reshape(1, -1)
        if X.shape[0] != Z.shape[0]:
            raise DataError(f"x has {X.shape[0]} rows but z has {Z.shape[0]}")
        out = np.column_stack([f.evaluate(X, Z) for f in self._features])
        if not np.all(np.isfinite(out)):
            bad = [self.names[j] for j in np.flatnonzero(~np.all(np.isfinite(out), axis=0))]
            raise NumericError(f"non-finite feature values from {bad}")
        return out

    def evaluate_dataset(self, data) -> np.ndarray:
        return self.evaluate(data.x, data.z)

    def to_manifest(self) -> dict:
        return {"format": "pragmed-features", "version": 1,
                "features": [f.to_dict() for f in self._features]}

    @classmethod
    def from_manifest(cls, doc: dict) -> "FeatureLibrary":
        if doc.get("format") != "pragmed-features":
            raise ConfigError("not a feature manifest")
        if doc.get("version") != 1:
            raise ConfigError(f"unsupported manifest version {doc.get('version')}")
        return cls([_feature_from_dict(f) for f in doc.get("features", [])])

    def __repr__(self) -> str:
        return f"FeatureLibrary({self.names})"


def _builtin_from_dict(d: dict, name: str) -> Builtin:
    fn = d.get("fn")
    return Builtin(name, fn, index=int(d.get("index", 0)), weights=d.get("weights"),
                   value=float(d.get("value", 0.0)))


def _feature_from_dict(d: dict) -> Feature:
    try:
        name, kind = d["name"], d["kind"]
    except KeyError as exc:
        raise ConfigError(f"feature entry missing {exc}") from None
    if kind == "builtin":
        return _builtin_from_dict(d, name)
    if kind == "product":
        return ProductFeature(name, _builtin_from_dict(d["x"], name + ".x"),
                              _builtin_from_dict(d["z"], name + ".z"))
    if kind == "convolution":
        bank = ConvBank(**d.get("bank", {}))
        return QuadrantConvFeature(name, bank, int(d["quadrant"]), int(d["t_column"]))
    raise ConfigError(f"unknown feature kind {kind!r}")


def load_manifest(path) -> FeatureLibrary:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"no such manifest: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return FeatureLibrary.from_manifest(doc)


def save_manifest(lib: FeatureLibrary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(lib.to_manifest(), fh, indent=2)
        fh.write("\n")


def eval_features(lib: FeatureLibrary, x, z) -> np.ndarray:
    """``(phi_1(x, z), ..., phi_d(x, z))`` for a single row."""
    return lib.evaluate(np.atleast_2d(np.asarray(x, dtype=np.float64)),
                        np.atleast_2d(np.asarray(z, dtype=np.float64)))[0]


def identity_library(d_x: int) -> FeatureLibrary:
    return FeatureLibrary([Builtin(f"x{i}", "x_index", index=i) for i in range(d_x)])


def quadrant_library(bank: ConvBank | None = None, t_column: int = 100) -> FeatureLibrary:
    bank = bank or ConvBank()
    return FeatureLibrary([QuadrantConvFeature(f"phi{q + 1}", bank, q, t_column) for q in range(4)])


# ---------------------------------------------------------------------------
# Monte Carlo reference for E[phi(X, Z) | w, z]

@dataclass(frozen=True)
class OracleEstimate:
    mean: np.ndarray
    stderr: np.ndarray
    m: int


class _Sampler(Protocol):
    def sample_x(self, w, z, m: int, rng: np.random.Generator) -> np.ndarray: ...


def conditional_expectation_oracle(gen: _Sampler, lib: FeatureLibrary, w, z, m: int,
                                   seed: int = 0, chunk: int = 20_000) -> OracleEstimate:
    """Average ``phi(X, z)`` over ``m`` fresh draws of ``X | w, z`` from ``gen``.

    ``gen`` is any object with ``sample_x(w, z, m, rng) -> (m, d_x)``.
    """
    if m < 1:
        raise ConfigError("need at least one Monte Carlo draw")
    z = np.asarray(z, dtype=np.float64).ravel()
    rng = np.random.default_rng(seed)
    total = np.zeros(lib.d)
    total_sq = np.zeros(lib.d)
    done = 0
    while done < m:
        k = min(chunk, m - done)
        X = gen.sample_x(w, z, k, rng)
        phi = lib.evaluate(X, np.broadcast_to(z, (k, z.size)))
        total += phi.sum(axis=0)
        total_sq += (phi**2).sum(axis=0)
        done += k
    mean = total / m
    if m > 1:
        var = np.maximum(total_sq / m - mean**2, 0.0) * m / (m - 1)
        stderr = np.sqrt(var / m)
    else:
        stderr = np.full(lib.d, np.inf)
    return OracleEstimate(mean, stderr, m)
