"""Evaluation protocol: MSE against label fraction for the two-stage method and baselines.

For every trial a benchmark is generated (or loaded), the new-regime data
are split into a training pool and a test split, and

* each baseline is trained on the first ``f * |pool|`` labeled rows of the
  pool using ``(w, z)`` only;
* the method fits both stages on the historic data, adapts stage one on the
  whole pool with labels stripped, and never reads a new-regime label.

Both are scored by MSE against ``y`` on the same test split. Because the
pool and the test split do not depend on ``f``, the method's MSE is the
same number at every fraction.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import Dataset, SplitSpec, concat, load_csv, make_new_regime_splits
from .errors import ConfigError, DataError
from .estimator import (
    CausalResponseModel,
    StageOneModel,
    adapt_stage_one,
    fit_stage_one,
    fit_stage_two,
    predict_do_batch,
)
from .features import FeatureLibrary, load_manifest
from .mediation import MediationReport, partition_features
from .regress import RegressorSpec, fit_regressor
from .simgen import ImgPertConfig, make_benchmark, sample_theta_trial

__all__ = [
    "DEFAULT_FRACTIONS",
    "DEFAULT_BASELINES",
    "METHOD",
    "ExperimentConfig",
    "ResultTable",
    "fit_historic",
    "run_baseline_curve",
    "run_method",
    "run_theta_trials",
    "emit_report",
    "render_svg",
]

log = logging.getLogger(__name__)

METHOD = "method"
DEFAULT_FRACTIONS = tuple(round(0.1 * k, 1) for k in range(1, 11))
DEFAULT_BASELINES = ({"kind": "lasso"}, {"kind": "forest"}, {"kind": "gboost"})
_PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")


def _baseline_name(spec: RegressorSpec, name: str | None = None) -> str:
    return name or spec.kind


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for :func:`run_theta_trials`; see ``docs/config.md`` for the JSON layout."""

    generator: dict | None = field(default_factory=dict)
    csv: dict | None = None
    baselines: tuple = DEFAULT_BASELINES
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    trials: int | None = None
    theta_mode: str = "single"
    shuffles: int | None = None
    seed: int = 0
    alpha: float = 0.01
    stage_one: dict = field(default_factory=lambda: {"kind": "forest"})
    z_columns: tuple[int, ...] | None = (100,)
    out_of_fold: bool = True
    penalty: str = "adaptive"
    test_fraction: float = 0.5
    n_new: int = 2000
    w_new: int = 5
    mediation: bool = False
    threads: int = 1
    outdir: str | None = None

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if not fr:
            raise ConfigError("need at least one label fraction")
        if any(not 0.0 < f <= 1.0 for f in fr):
            raise ConfigError("label fractions must lie in (0, 1]")
        if any(b <= a for a, b in zip(fr, fr[1:])):
            raise ConfigError("label fractions must be strictly increasing")
        object.__setattr__(self, "fractions", fr)
        if self.trials is not None and int(self.trials) < 1:
            raise ConfigError("trial count must be at least 1")
        if self.theta_mode not in ("single", "multi"):
            raise ConfigError(f"unknown theta mode {self.theta_mode!r}")
        if self.shuffles is not None and int(self.shuffles) < 1:
            raise ConfigError("shuffles must be at least 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha must lie in (0, 1]")
        if (self.csv is None) == (self.generator is None):
            raise ConfigError("give exactly one data source: 'generator' or 'csv'")
        if self.csv is not None and not {"historic", "new", "features"} <= set(self.csv):
            raise ConfigError("csv source needs 'historic', 'new' and 'features'")
        if not self.baselines:
            raise ConfigError("need at least one baseline")
        object.__setattr__(self, "baselines", tuple(dict(b) for b in self.baselines))
        self.baseline_specs()  # validate
        RegressorSpec.from_dict(self.stage_one)
        if self.z_columns is not None:
            object.__setattr__(self, "z_columns", tuple(int(c) for c in self.z_columns))

    @property
    def n_trials(self) -> int:
        if self.trials is not None:
            return int(self.trials)
        return 100 if self.theta_mode == "single" else 1500

    @property
    def n_shuffles(self) -> int:
        if self.shuffles is not None:
            return int(self.shuffles)
        return 10 if self.theta_mode == "single" else 1

    def baseline_specs(self) -> list[tuple[str, RegressorSpec]]:
        out = []
        for b in self.baselines:
            spec = RegressorSpec.from_dict(b)
            out.append((_baseline_name(spec, b.get("name")), spec))
        names = [n for n, _ in out]
        if len(set(names)) != len(names) or METHOD in names:
            raise ConfigError(f"baseline names must be unique and differ from {METHOD!r}")
        return out

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["baselines"] = [dict(b) for b in self.baselines]
        d["fractions"] = list(self.fractions)
        d["z_columns"] = None if self.z_columns is None else list(self.z_columns)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown experiment settings: {sorted(unknown)}")
        d = dict(d)
        if "csv" in d and "generator" not in d:
            d["generator"] = None
        for key in ("fractions", "baselines"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"no such config file: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(doc)


# ---------------------------------------------------------------------------
# Results

@dataclass
class ResultTable:
    """Long-format results: one row per (method, fraction, trial)."""

    rows: list = field(default_factory=list)

    def add(self, method: str, fraction: float, trial: int, mse: float) -> None:
        if not mse >= 0.0:
            raise DataError(f"invalid mse {mse} for {method}")
        self.rows.append((str(method), float(fraction), int(trial), float(mse)))

    def extend(self, other: "ResultTable") -> None:
        self.rows.extend(other.rows)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def methods(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r[0] not in seen:
                seen.append(r[0])
        return seen

    def values(self, method: str, fraction: float) -> np.ndarray:
        return np.array([r[3] for r in self.rows if r[0] == method and r[1] == fraction])

    def aggregates(self) -> list[tuple[str, float, float, float, int]]:
        """``(method, fraction, mean, se, n_trials)``; se is over trials only."""
        groups: dict[tuple[str, float], list[float]] = {}
        for m, f, _, v in sorted(self.rows, key=lambda r: (r[0], r[1], r[2])):
            groups.setdefault((m, f), []).append(v)
        out = []
        for (m, f), vals in sorted(groups.items(), key=lambda kv: (self.methods.index(kv[0][0]), kv[0][1])):
            v = np.array(vals)
            se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
            out.append((m, f, float(v.mean()), se, int(v.size)))
        return out

    def mean(self, method: str, fraction: float) -> float:
        return float(self.values(method, fraction).mean())

    def results_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "label_fraction", "trial", "mse"])
        for m, f, t, v in self.rows:
            w.writerow([m, format(f, ".17g"), t, format(v, ".17g")])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "label_fraction", "mean_mse", "se", "n_trials"])
        for m, f, mu, se, n in self.aggregates():
            w.writerow([m, format(f, ".17g"), format(mu, ".17g"), format(se, ".17g"), n])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# Protocol pieces

def run_baseline_curve(new_regime: Dataset, fractions: Sequence[float], baselines, seed: int = 0,
                       shuffles: int = 1, test_fraction: float = 0.5) -> list[tuple[str, float, float]]:
    """Baseline MSE per (baseline, fraction), averaged over ``shuffles`` seeded splits.

    Parameters
    ----------
    new_regime : Dataset
        Labeled rows of the new regime.
    fractions : sequence of float
        Label fractions in (0, 1].
    baselines : sequence of RegressorSpec, str or (name, RegressorSpec)
    seed : int
        Shuffle ``s`` uses split seed ``seed + s``.

    Returns
    -------
    list of (name, fraction, mse)
    """
    named = []
    for b in baselines:
        if isinstance(b, tuple):
            named.append(b)
        else:
            spec = RegressorSpec(b) if isinstance(b, str) else b
            named.append((spec.kind, spec))
    if not named:
        raise ConfigError("need at least one baseline")
    acc = {(name, f): 0.0 for name, _ in named for f in fractions}
    for s in range(shuffles):
        for f in fractions:
            lab, _, test = make_new_regime_splits(new_regime, SplitSpec(f, seed + s, test_fraction=test_fraction))
            if lab.n < 2:
                raise DataError(f"label fraction {f} leaves {lab.n} training rows")
            X_tr = np.hstack([lab.w, lab.z])
            X_te = np.hstack([test.w, test.z])
            for name, spec in named:
                pred = fit_regressor(X_tr, lab.y, spec).predict(X_te)
                acc[(name, f)] += float(np.mean((pred - test.y) ** 2))
    return [(name, f, acc[(name, f)] / shuffles) for name, _ in named for f in fractions]


def fit_historic(historic, lib: FeatureLibrary, spec: RegressorSpec | str = "forest",
                 z_columns=None, out_of_fold: bool = True, penalty: str = "adaptive",
                 seed: int = 0, n_jobs: int = 1) -> tuple[StageOneModel, CausalResponseModel]:
    """Both stages on the pooled historic data."""
    g = fit_stage_one(historic, lib, spec, z_columns, n_jobs=n_jobs)
    crm = fit_stage_two(g, historic, lib, out_of_fold=out_of_fold, penalty=penalty, seed=seed, n_jobs=n_jobs)
    return g, crm


def run_method(historic, new_unlabeled: Dataset, test: Dataset, lib: FeatureLibrary,
               spec: RegressorSpec | str = "forest", z_columns=None, fitted=None,
               out_of_fold: bool = True, penalty: str = "adaptive", seed: int = 0,
               n_jobs: int = 1) -> float:
    """Test MSE of the two-stage estimate for the new regime.

    ``fitted`` may carry a ``(StageOneModel, CausalResponseModel)`` pair
    from :func:`fit_historic` to skip refitting the historic stages.
    """
    if not test.labeled:
        raise DataError("test split must be labeled")
    if fitted is None:
        fitted = fit_historic(historic, lib, spec, z_columns, out_of_fold, penalty, seed, n_jobs)
    g, crm = fitted
    g_star = adapt_stage_one(g, new_unlabeled, lib, n_jobs=n_jobs)
    pred = predict_do_batch(crm, g_star, test.w, test.z)
    return float(np.mean((pred - test.y) ** 2))


def _method_mse(fitted, new: Dataset, lib, seed, shuffles, test_fraction, n_jobs) -> float:
    total = 0.0
    for s in range(shuffles):
        # any fraction gives the same pool and test split
        lab, unl, test = make_new_regime_splits(new, SplitSpec(1.0, seed + s, test_fraction=test_fraction))
        pool = concat([lab.strip_labels(), unl]) if unl.n else lab.strip_labels()
        total += run_method(None, pool, test, lib, fitted=fitted, n_jobs=n_jobs)
    return total / shuffles


def _trial_data(cfg: ExperimentConfig, trial_seed: int, trial: int):
    if cfg.csv is not None:
        lib = load_manifest(cfg.csv["features"])
        paths = cfg.csv["historic"]
        paths = [paths] if isinstance(paths, str) else list(paths)
        historic = [load_csv(p) for p in paths]
        new = load_csv(cfg.csv["new"])
        return historic, new, lib, None
    gcfg = ImgPertConfig.from_dict({**(cfg.generator or {}), "seed": trial_seed})
    theta_seed = int(np.random.SeedSequence([cfg.seed, trial, 1]).generate_state(1)[0])
    outcome = sample_theta_trial(theta_seed, cfg.theta_mode)
    gcfg = gcfg.with_outcome(outcome)
    historic, new, gen = make_benchmark(gcfg, n_new=cfg.n_new, w_new=cfg.w_new)
    return [historic], new, gen.library(), outcome


def run_theta_trials(cfg: ExperimentConfig, progress=None) -> tuple[ResultTable, MediationReport | None]:
    """Full protocol over ``cfg.n_trials`` trials with seeds derived from ``cfg.seed``.

    Returns the result table and, if ``cfg.mediation`` is set, the feature
    partition for the first trial (historic data split in half).
    """
    table = ResultTable()
    report = None
    specs = cfg.baseline_specs()
    stage_spec = RegressorSpec.from_dict(cfg.stage_one)
    for trial in range(cfg.n_trials):
        trial_seed = int(np.random.SeedSequence([cfg.seed, trial]).generate_state(1)[0])
        historic, new, lib, outcome = _trial_data(cfg, trial_seed, trial)
        zc = cfg.z_columns
        if zc is not None and any(c >= historic[0].d_z for c in zc):
            zc = None
        fitted = fit_historic(historic, lib, stage_spec, zc, cfg.out_of_fold, cfg.penalty,
                              seed=trial_seed % 2**31, n_jobs=cfg.threads)
        split_seed = trial_seed % 2**31
        m = _method_mse(fitted, new, lib, split_seed, cfg.n_shuffles, cfg.test_fraction, cfg.threads)
        for f in cfg.fractions:
            table.add(METHOD, f, trial, m)
        for name, f, v in run_baseline_curve(new, cfg.fractions, specs, split_seed,
                                             cfg.n_shuffles, cfg.test_fraction):
            table.add(name, f, trial, v)
        if cfg.mediation and trial == 0:
            pooled = concat(historic) if len(historic) > 1 else historic[0]
            perm = np.random.default_rng(split_seed).permutation(pooled.n)
            half = pooled.n // 2
            report = partition_features(fitted[1], lib, pooled.take(np.sort(perm[:half])),
                                        pooled.take(np.sort(perm[half:])), cfg.alpha, stage_spec,
                                        z_columns=zc, seed=split_seed)
        log.info("trial %d: method mse %.6g", trial, m)
        if progress is not None:
            progress(trial, m)
    return table, report


# ---------------------------------------------------------------------------
# Report

def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_svg(table: ResultTable, width: int = 800, height: int = 500) -> str:
    """Line chart of mean MSE against label fraction with standard-error bars."""
    agg = table.aggregates()
    methods = table.methods
    left, right, top, bottom = 80, 150, 30, 60
    pw, ph = width - left - right, height - top - bottom
    fr = sorted({a[1] for a in agg})
    lo = min(a[2] - a[3] for a in agg)
    hi = max(a[2] + a[3] for a in agg)
    if hi <= lo:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    f0, f1 = (fr[0] - 0.05, fr[-1] + 0.05)

    def sx(f):
        return left + (f - f0) / (f1 - f0) * pw

    def sy(v):
        return top + (hi - v) / (hi - lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" '
           f'width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for f in fr:
        x = sx(f)
        out.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 18}" text-anchor="middle">{f:g}</text>')
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        y = sy(v)
        out.append(f'<line x1="{left - 5}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{y + 4:.2f}" text-anchor="end">{v:.4g}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 15}" text-anchor="middle">label fraction</text>')
    out.append(f'<text transform="translate(18,{top + ph / 2:.2f}) rotate(-90)" text-anchor="middle">MSE</text>')
    for i, m in enumerate(methods):
        color = _PALETTE[i % len(_PALETTE)]
        pts = [(a[1], a[2], a[3]) for a in agg if a[0] == m]
        coords = " ".join(f"{sx(f):.2f},{sy(v):.2f}" for f, v, _ in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        for f, v, se in pts:
            if se > 0:
                out.append(f'<line x1="{sx(f):.2f}" y1="{sy(v - se):.2f}" x2="{sx(f):.2f}" '
                           f'y2="{sy(v + se):.2f}" stroke="{color}"/>')
        ly = top + 20 * i + 10
        out.append(f'<line x1="{left + pw + 15}" y1="{ly}" x2="{left + pw + 40}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 45}" y="{ly + 4}">{_esc(m)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(table: ResultTable, mediation: MediationReport | None, outdir) -> list[str]:
    """Write results.csv, summary.csv, curves.svg and (optionally) mediation.csv; return paths."""
    if len(table) == 0:
        raise DataError("empty result table")
    try:
        os.makedirs(outdir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {outdir}: {exc}") from None
    files = {"results.csv": table.results_csv(), "summary.csv": table.summary_csv(),
             "curves.svg": render_svg(table)}
    if mediation is not None:
        files["mediation.csv"] = mediation.to_csv()
    paths = []
    for name, text in files.items():
        path = os.path.join(outdir, name)
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise DataError(f"cannot write {path}: {exc}") from None
        paths.append(path)
    return paths
