"""Regime-indexed samples, CSV ingestion and new-regime split protocol.

A :class:`Dataset` stores its rows column-wise as read-only numpy arrays::

    regime : (n,)      int64, regime id of each row
    w      : (n, d_w)  treatment
    z      : (n, d_z)  pre-treatment covariates
    x      : (n, d_x)  the complex object
    y      : (n,)      outcome, or ``None`` for an unlabeled dataset

The CSV layout is fixed: ``regime, w*, z*, x*, y`` with ``y`` optional.
Floats are written with 17 significant digits so that
``load_csv(save_csv(d))`` reproduces every finite value bit-exactly.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "Sample",
    "Schema",
    "Dataset",
    "SplitSpec",
    "CoverageReport",
    "load_csv",
    "save_csv",
    "split_by_regime",
    "concat",
    "make_new_regime_splits",
    "support_diagnostic",
]


@dataclass(frozen=True)
class Sample:
    """A single row; ``y`` is ``None`` for unlabeled samples."""

    w: np.ndarray
    z: np.ndarray
    x: np.ndarray
    y: float | None
    regime: int


@dataclass(frozen=True)
class Schema:
    """Column names of each block, in file order."""

    w: tuple[str, ...]
    z: tuple[str, ...]
    x: tuple[str, ...]
    labeled: bool
    regime: str = "regime"
    y: str = "y"

    @classmethod
    def default(cls, d_w: int, d_z: int, d_x: int, labeled: bool = True) -> "Schema":
        return cls(
            w=tuple(f"w{i}" for i in range(d_w)),
            z=tuple(f"z{i}" for i in range(d_z)),
            x=tuple(f"x{i}" for i in range(d_x)),
            labeled=labeled,
        )

    @classmethod
    def from_header(cls, header: Sequence[str]) -> "Schema":
        """Infer the schema from a header of the form ``regime,w0..,z0..,x0..[,y]``.

        A bare block name (``w``) is accepted for a block with one column.
        """
        header = [h.strip() for h in header]
        if not header or header[0] != "regime":
            raise DataError("first column must be 'regime'")
        labeled = header[-1] == "y"
        body = header[1:-1] if labeled else header[1:]
        blocks: dict[str, list[str]] = {"w": [], "z": [], "x": []}
        order = []
        for name in body:
            prefix = name[:1]
            if prefix not in blocks or not (name[1:].isdigit() or name[1:] == ""):
                raise DataError(f"unrecognised column {name!r}")
            if order and order[-1] != prefix and prefix in order:
                raise DataError(f"column {name!r} out of block order")
            if not order or order[-1] != prefix:
                order.append(prefix)
            blocks[prefix].append(name)
        if order != [b for b in "wzx" if blocks[b]]:
            raise DataError("columns must be ordered regime, w*, z*, x*, y")
        for b, names in blocks.items():
            if len(set(names)) != len(names) or (b in names and len(names) > 1):
                raise DataError(f"duplicate or ambiguous columns in block {b!r}")
        return cls(tuple(blocks["w"]), tuple(blocks["z"]), tuple(blocks["x"]), labeled)

    @property
    def header(self) -> list[str]:
        cols = [self.regime, *self.w, *self.z, *self.x]
        if self.labeled:
            cols.append(self.y)
        return cols

    def with_labeled(self, labeled: bool) -> "Schema":
        return Schema(self.w, self.z, self.x, labeled, self.regime, self.y)


def _frozen(a, ndim, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    if ndim == 2 and a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != ndim:
        raise DataError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    regime: np.ndarray
    w: np.ndarray
    z: np.ndarray
    x: np.ndarray
    y: np.ndarray | None = None
    schema: Schema | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "regime", _frozen(self.regime, 1, np.int64))
        for name in ("w", "z", "x"):
            object.__setattr__(self, name, _frozen(getattr(self, name), 2))
        n = self.regime.shape[0]
        for name in ("w", "z", "x"):
            if getattr(self, name).shape[0] != n:
                raise DataError(f"block {name} has {getattr(self, name).shape[0]} rows, expected {n}")
        if self.y is not None:
            object.__setattr__(self, "y", _frozen(self.y, 1))
            if self.y.shape[0] != n:
                raise DataError("y length does not match the number of rows")
        if np.any(self.regime < 0):
            raise DataError("regime ids must be nonnegative")
        schema = self.schema
        if schema is None:
            schema = Schema.default(self.d_w, self.d_z, self.d_x, self.labeled)
        elif (len(schema.w), len(schema.z), len(schema.x)) != (self.d_w, self.d_z, self.d_x):
            raise DataError("schema dimensions do not match the data")
        elif schema.labeled != self.labeled:
            schema = schema.with_labeled(self.labeled)
        object.__setattr__(self, "schema", schema)

    # -- shape ---------------------------------------------------------
    def __len__(self) -> int:
        return int(self.regime.shape[0])

    @property
    def n(self) -> int:
        return len(self)

    @property
    def labeled(self) -> bool:
        return self.y is not None

    @property
    def d_w(self) -> int:
        return int(self.w.shape[1])

    @property
    def d_z(self) -> int:
        return int(self.z.shape[1])

    @property
    def d_x(self) -> int:
        return int(self.x.shape[1])

    # -- row access ----------------------------------------------------
    def __getitem__(self, i: int) -> Sample:
        y = None if self.y is None else float(self.y[i])
        return Sample(self.w[i], self.z[i], self.x[i], y, int(self.regime[i]))

    def samples(self) -> list[Sample]:
        return [self[i] for i in range(len(self))]

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], schema: Schema | None = None) -> "Dataset":
        if not samples:
            raise DataError("cannot build a Dataset from zero samples without dimensions")
        ys = [s.y for s in samples]
        has_y = [y is not None for y in ys]
        if any(has_y) and not all(has_y):
            raise DataError("y must be present in every row or in none")
        return cls(
            regime=[s.regime for s in samples],
            w=np.vstack([np.atleast_1d(s.w) for s in samples]),
            z=np.vstack([np.atleast_1d(s.z) for s in samples]),
            x=np.vstack([np.atleast_1d(s.x) for s in samples]),
            y=ys if all(has_y) else None,
            schema=schema,
        )

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.intp)
        y = None if self.y is None else self.y[idx]
        return Dataset(self.regime[idx], self.w[idx], self.z[idx], self.x[idx], y, self.schema)

    def strip_labels(self) -> "Dataset":
        return Dataset(self.regime, self.w, self.z, self.x, None, self.schema)

    def with_y(self, y) -> "Dataset":
        return Dataset(self.regime, self.w, self.z, self.x, y, self.schema)

    def regimes(self) -> list[int]:
        return sorted(int(r) for r in np.unique(self.regime))

    def row_keys(self) -> set[bytes]:
        """Byte keys of the (w, z, x) rows; used to detect overlapping splits."""
        wzx = np.ascontiguousarray(np.hstack([self.w, self.z, self.x]))
        return {row.tobytes() for row in wzx}

    def __repr__(self) -> str:
        kind = "labeled" if self.labeled else "unlabeled"
        return (f"Dataset(n={self.n}, d_w={self.d_w}, d_z={self.d_z}, d_x={self.d_x}, "
                f"{kind}, regimes={self.regimes()})")


def concat(datasets: Iterable[Dataset]) -> Dataset:
    """Row-wise concatenation; all inputs must share dimensions and labeling."""
    datasets = list(datasets)
    if not datasets:
        raise DataError("nothing to concatenate")
    first = datasets[0]
    for d in datasets[1:]:
        if (d.d_w, d.d_z, d.d_x) != (first.d_w, first.d_z, first.d_x):
            raise DataError("datasets disagree on w/z/x dimensions")
        if d.labeled != first.labeled:
            raise DataError("cannot mix labeled and unlabeled datasets")
    y = np.concatenate([d.y for d in datasets]) if first.labeled else None
    return Dataset(
        np.concatenate([d.regime for d in datasets]),
        np.vstack([d.w for d in datasets]),
        np.vstack([d.z for d in datasets]),
        np.vstack([d.x for d in datasets]),
        y,
        first.schema,
    )


# ---------------------------------------------------------------------------
# CSV

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_csv(d: Dataset, path: str | os.PathLike) -> None:
    schema = d.schema
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(schema.header)
        for i in range(d.n):
            row = [str(int(d.regime[i]))]
            row.extend(_fmt(v) for v in d.w[i])
            row.extend(_fmt(v) for v in d.z[i])
            row.extend(_fmt(v) for v in d.x[i])
            if d.labeled:
                row.append(_fmt(d.y[i]))
            writer.writerow(row)


def _parse_row(cells: list[str], lineno: int, header: list[str]) -> np.ndarray:
    try:
        vals = np.array(cells, dtype=np.float64)
    except ValueError:
        vals = None
    if vals is None or not np.all(np.isfinite(vals)):
        for j, cell in enumerate(cells):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"row {lineno}, column {header[j]!r}: non-numeric cell {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"row {lineno}, column {header[j]!r}: non-finite value {cell!r}")
    return vals


def load_csv(path: str | os.PathLike, schema: Schema | None = None) -> Dataset:
    """Read a dataset written by :func:`save_csv` (or any file in that layout).

    If ``schema`` is given the header must match it exactly; otherwise the
    schema is inferred from the column prefixes.
    """
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if schema is None:
            schema = Schema.from_header(header)
        elif header != schema.header:
            raise DataError(f"{path}: header does not match schema (got {header[:5]}...)")
        width = len(header)
        rows = []
        for lineno, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != width:
                raise DataError(f"{path}: row {lineno} has {len(cells)} cells, expected {width}")
            rows.append(_parse_row(cells, lineno, header))
    data = np.vstack(rows) if rows else np.empty((0, width))
    regime = data[:, 0]
    if np.any(regime != np.round(regime)):
        raise DataError(f"{path}: regime ids must be integers")
    d_w, d_z, d_x = len(schema.w), len(schema.z), len(schema.x)
    c = 1
    w = data[:, c:c + d_w]; c += d_w
    z = data[:, c:c + d_z]; c += d_z
    x = data[:, c:c + d_x]; c += d_x
    y = data[:, c] if schema.labeled else None
    return Dataset(regime.astype(np.int64), w, z, x, y, schema)


# ---------------------------------------------------------------------------
# Splitting

def split_by_regime(d: Dataset) -> dict[int, Dataset]:
    """Partition rows by regime id; keys are sorted ascending."""
    return {r: d.take(np.flatnonzero(d.regime == r)) for r in d.regimes()}


@dataclass(frozen=True)
class SplitSpec:
    """How to split new-regime data into labeled/unlabeled training and test.

    With ``proportions=None`` the test share is ``test_fraction`` and the
    remaining training pool is divided ``label_fraction`` : ``1 - label_fraction``
    between labeled and unlabeled rows. The pool itself (its rows and their
    order) depends only on ``seed`` and ``test_fraction``, never on
    ``label_fraction``. Explicit ``proportions`` override this.
    """

    label_fraction: float
    seed: int = 0
    proportions: tuple[float, float, float] | None = None
    test_fraction: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.label_fraction <= 1.0:
            raise ConfigError(f"label_fraction must lie in (0, 1], got {self.label_fraction}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.proportions is not None:
            p = tuple(float(v) for v in self.proportions)
            if len(p) != 3 or min(p) < 0 or abs(sum(p) - 1.0) > 1e-9:
                raise ConfigError(f"proportions must be three nonnegative shares summing to 1, got {p}")
            object.__setattr__(self, "proportions", p)

    def sizes(self, n: int) -> tuple[int, int, int]:
        eps = 1e-9
        if self.proportions is not None:
            n_lab = int(math.floor(self.proportions[0] * n + eps))
            n_unl = int(math.floor(self.proportions[1] * n + eps))
        else:
            n_pool = int(math.floor((1.0 - self.test_fraction) * n + eps))
            n_lab = int(math.floor(self.label_fraction * n_pool + eps))
            n_unl = n_pool - n_lab
        return n_lab, n_unl, n - n_lab - n_unl


def make_new_regime_splits(d: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Split labeled new-regime data into (labeled_train, unlabeled_train, test).

    ``unlabeled_train`` has ``y`` stripped; ``test`` keeps ``y`` for scoring.
    Rounding favours the test split.
    """
    if not d.labeled:
        raise DataError("new-regime splits require labeled data")
    if len(d.regimes()) > 1:
        raise DataError("new-regime data must be homogeneous in regime")
    if d.n < 3:
        raise DataError("need at least 3 samples to split")
    n_lab, n_unl, n_test = spec.sizes(d.n)
    if n_lab < 1 or n_test < 1:
        raise DataError(f"split sizes {(n_lab, n_unl, n_test)} leave an empty labeled or test split")
    perm = np.random.default_rng(spec.seed).permutation(d.n)
    lab = d.take(perm[:n_lab])
    unl = d.take(perm[n_lab:n_lab + n_unl]).strip_labels()
    test = d.take(perm[n_lab + n_unl:])
    return lab, unl, test


# ---------------------------------------------------------------------------
# Support diagnostic

@dataclass(frozen=True)
class CoverageReport:
    per_dimension: np.ndarray
    coverage: float
    threshold: float
    violated: bool
    lower: np.ndarray
    upper: np.ndarray


def support_diagnostic(historic_labeled: Sequence[Dataset], new_unlabeled: Dataset,
                       threshold: float = 0.95) -> CoverageReport:
    """Fraction of new-regime ``x`` values inside the pooled historic range.

    Envelopes are axis-aligned ``[min, max]`` boxes per dimension of ``x``.
    This is a diagnostic for the support requirement, not a gate.
    """
    historic_labeled = list(historic_labeled)
    if not historic_labeled:
        raise DataError("empty historic pool")
    d_x = new_unlabeled.d_x
    if any(h.d_x != d_x for h in historic_labeled):
        raise DataError("x dimensions disagree between historic and new data")
    pooled = np.vstack([h.x for h in historic_labeled])
    lo, hi = pooled.min(axis=0), pooled.max(axis=0)
    inside = (new_unlabeled.x >= lo) & (new_unlabeled.x <= hi)
    per_dim = inside.mean(axis=0) if new_unlabeled.n else np.ones(d_x)
    coverage = float(per_dim.mean())
    return CoverageReport(per_dim, coverage, threshold, coverage < threshold, lo, hi)
