"""Pragmatic-mediator selection and the four-way partition of a feature library.

For a feature ``phi`` the conditional test compares two regressions fitted
on a training split::

    null         g0(z)    ~ E[phi | z]
    alternative  g1(w, z) ~ E[phi | w, z]

and asks, on a disjoint test split, whether the absolute residuals of the
null exceed those of the alternative (one-sided Wilcoxon). A feature is a
mediator when its outcome weight is nonzero and the Holm-adjusted p-value
is at most ``alpha``.

Partition classes:

* ``TILDE``: zero outcome weight.
* ``HAT``: no detectable dependence on ``(w, z)``.
* ``OVERLINE``: depends on ``z`` but not on ``w`` given ``z``.
* ``STAR``: nonzero weight and dependence on ``w`` given ``z`` (the mediators).
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, DataError
from .estimator import CausalResponseModel
from .features import FeatureLibrary
from .regress import RegressorSpec, fit_regressor
from .stats import TestResult, holm_adjust, wilcoxon_rank_sum_one_sided, wilcoxon_signed_rank_one_sided

__all__ = [
    "TILDE",
    "HAT",
    "OVERLINE",
    "STAR",
    "TESTS",
    "NULL_DESIGNS",
    "conditional_permutation",
    "FeatureRecord",
    "MediationReport",
    "ci_test_feature",
    "joint_test_feature",
    "select_mediators",
    "partition_features",
]

TILDE, HAT, OVERLINE, STAR = "TILDE", "HAT", "OVERLINE", "STAR"
TESTS = ("signed_rank", "rank_sum")
NULL_DESIGNS = ("permuted", "drop")


def _as_spec(spec):
    return RegressorSpec(spec) if isinstance(spec, str) else spec


def _check_splits(train: Dataset, test: Dataset):
    if train.n == 0:
        raise DataError("empty training split")
    if test.n == 0:
        raise DataError("empty test split")
    if (train.d_w, train.d_z, train.d_x) != (test.d_w, test.d_z, test.d_x):
        raise DataError("train and test layouts differ")
    if train.row_keys() & test.row_keys():
        raise DataError("train and test splits share rows")


def _compare(r0, r1, test: str) -> TestResult:
    if test == "signed_rank":
        return wilcoxon_signed_rank_one_sided(r0, r1)
    if test == "rank_sum":
        return wilcoxon_rank_sum_one_sided(r0, r1)
    raise ConfigError(f"unknown test {test!r}; choose from {TESTS}")


def _zsel(Z, z_columns):
    return Z if z_columns is None else Z[:, list(z_columns)]


def conditional_permutation(z: np.ndarray, rng: np.random.Generator, block: int = 10) -> np.ndarray:
    """Row permutation that only swaps rows with equal or nearby ``z``.

    Rows are grouped by their exact ``z`` value when there are at most
    ``n // block`` distinct values; otherwise by consecutive blocks of
    ``block`` rows along the leading principal direction of standardized
    ``z``. With no ``z`` columns the permutation is unrestricted.
    """
    n = z.shape[0]
    if z.shape[1] == 0 or n == 0:
        return rng.permutation(n)
    _, group = np.unique(z, axis=0, return_inverse=True)
    group = group.ravel()
    if group.max() + 1 > n // block:
        sd = z.std(0)
        zs = (z - z.mean(0)) / np.where(sd > 0, sd, 1.0)
        lead = np.linalg.svd(zs, full_matrices=False)[2][0]
        group = np.empty(n, dtype=np.intp)
        group[np.argsort(zs @ lead, kind="stable")] = np.arange(n) // block
    out = np.empty(n, dtype=np.intp)
    out[np.argsort(group, kind="stable")] = np.lexsort((rng.random(n), group))
    return out


def ci_test_feature(phi_index: int, lib: FeatureLibrary, data_train: Dataset, data_test: Dataset,
                    spec: RegressorSpec | str = "forest", test: str = "signed_rank",
                    z_columns: Sequence[int] | None = None, marginal: bool = False,
                    check_overlap: bool = True, null_design: str = "permuted", seed: int = 0) -> TestResult:
    """One-sided test that adding ``w`` improves out-of-sample prediction of ``phi``.

    Parameters
    ----------
    phi_index : int
        Feature position in ``lib``.
    data_train, data_test : Dataset
        Disjoint splits; models are fitted on the first and scored on the second.
    spec : RegressorSpec or str
        Learner for both the null and the alternative model.
    test : {"signed_rank", "rank_sum"}
        Paired signed-rank on the residual pairs, or unpaired rank-sum.
    z_columns : sequence of int, optional
        Conditioning columns of ``z`` (all by default).
    marginal : bool
        Drop ``z`` from both models (valid when ``w`` is randomized).
    null_design : {"permuted", "drop"}
        ``"drop"`` fits the null on ``z`` alone. ``"permuted"`` (default) also
        feeds it a copy of ``w`` shuffled within strata of ``z`` (see
        :func:`conditional_permutation`), so both models see inputs of the
        same shape and, under the null, the same joint law. Randomized
        learners such as forests otherwise favour the wider alternative
        through lower ensemble variance.
    seed : int
        Seed of the permutation.

    Returns
    -------
    TestResult
    """
    spec = _as_spec(spec)
    if not 0 <= phi_index < lib.d:
        raise ConfigError(f"feature index {phi_index} out of range")
    if check_overlap:
        _check_splits(data_train, data_test)
    one = lib.subset([phi_index])
    p_tr = one.evaluate_dataset(data_train)[:, 0]
    p_te = one.evaluate_dataset(data_test)[:, 0]
    if marginal:
        z_tr = np.empty((data_train.n, 0))
        z_te = np.empty((data_test.n, 0))
    else:
        z_tr = _zsel(data_train.z, z_columns)
        z_te = _zsel(data_test.z, z_columns)
    if null_design == "permuted":
        rng = np.random.default_rng([seed, phi_index])
        w_tr = data_train.w[conditional_permutation(z_tr, rng)]
        w_te = data_test.w[conditional_permutation(z_te, rng)]
        null = fit_regressor(np.hstack([w_tr, z_tr]), p_tr, spec)
        r0 = np.abs(p_te - null.predict(np.hstack([w_te, z_te])))
    elif null_design != "drop":
        raise ConfigError(f"unknown null design {null_design!r}; choose from {NULL_DESIGNS}")
    elif z_tr.shape[1] == 0:
        r0 = np.abs(p_te - p_tr.mean())
    else:
        r0 = np.abs(p_te - fit_regressor(z_tr, p_tr, spec).predict(z_te))
    alt = fit_regressor(np.hstack([data_train.w, z_tr]), p_tr, spec)
    r1 = np.abs(p_te - alt.predict(np.hstack([data_test.w, z_te])))
    return _compare(r0, r1, test)


def joint_test_feature(phi_index: int, lib: FeatureLibrary, data_train: Dataset, data_test: Dataset,
                       spec: RegressorSpec | str = "forest", test: str = "signed_rank",
                       z_columns: Sequence[int] | None = None, check_overlap: bool = True) -> TestResult:
    """One-sided test of ``phi`` independent of ``(w, z)``: training mean vs ``g(w, z)``."""
    spec = _as_spec(spec)
    if check_overlap:
        _check_splits(data_train, data_test)
    one = lib.subset([phi_index])
    p_tr = one.evaluate_dataset(data_train)[:, 0]
    p_te = one.evaluate_dataset(data_test)[:, 0]
    r0 = np.abs(p_te - p_tr.mean())
    alt = fit_regressor(np.hstack([data_train.w, _zsel(data_train.z, z_columns)]), p_tr, spec)
    r1 = np.abs(p_te - alt.predict(np.hstack([data_test.w, _zsel(data_test.z, z_columns)])))
    return _compare(r0, r1, test)


@dataclass(frozen=True)
class FeatureRecord:
    name: str
    theta: float
    p_raw: float | None
    p_adjusted: float | None
    cls: str
    p_joint: float | None = None
    p_joint_adjusted: float | None = None


@dataclass(frozen=True)
class MediationReport:
    records: tuple[FeatureRecord, ...]
    alpha: float
    test: str
    notes: tuple[str, ...] = field(default=())

    @property
    def mediators(self) -> list[str]:
        return [r.name for r in self.records if r.cls == STAR]

    def by_class(self) -> dict[str, list[str]]:
        out = {c: [] for c in (TILDE, HAT, OVERLINE, STAR)}
        for r in self.records:
            out[r.cls].append(r.name)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", "theta", "p_raw", "p_adj", "class"])
        for r in self.records:
            w.writerow([r.name, format(r.theta, ".17g"), _num(r.p_raw), _num(r.p_adjusted), r.cls])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    def summary(self) -> str:
        lines = [f"mediation report (alpha={self.alpha:g}, test={self.test})"]
        width = max([len(r.name) for r in self.records] + [7])
        for r in self.records:
            p = "-" if r.p_adjusted is None else f"{r.p_adjusted:.3g}"
            lines.append(f"  {r.name:<{width}}  theta={r.theta:+.4f}  p_adj={p:<9} {r.cls}")
        lines.append(f"mediators: {', '.join(self.mediators) or '(none)'}")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines) + "\n"

    def write(self, outdir) -> None:
        os.makedirs(outdir, exist_ok=True)
        self.write_csv(os.path.join(outdir, "mediation.csv"))
        with open(os.path.join(outdir, "mediation.txt"), "w", encoding="utf-8") as fh:
            fh.write(self.summary())


def _num(v):
    return "" if v is None else format(float(v), ".17g")


def _check_alpha(alpha):
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")


def _ci_family(crm, lib, train, test, alpha, spec, test_name, z_columns, marginal, null_design, seed):
    _check_alpha(alpha)
    if tuple(lib.names) != crm.feature_names:
        raise DataError("feature library does not match the fitted outcome model")
    _check_splits(train, test)
    nz = [int(i) for i in crm.support]
    raw = np.array([ci_test_feature(i, lib, train, test, spec, test_name, z_columns, marginal,
                                    check_overlap=False, null_design=null_design, seed=seed).p_value
                    for i in nz])
    adj = holm_adjust(raw)
    return nz, raw, adj


def select_mediators(crm: CausalResponseModel, lib: FeatureLibrary, train: Dataset, test: Dataset,
                     alpha: float = 0.01, spec: RegressorSpec | str = "forest",
                     test_name: str = "signed_rank", z_columns: Sequence[int] | None = None,
                     marginal: bool = False, null_design: str = "permuted", seed: int = 0) -> MediationReport:
    """Test every nonzero-weight feature and keep those rejected after Holm.

    Features with zero weight are reported as ``TILDE`` and never tested;
    the remaining ones are ``STAR`` if selected and ``OVERLINE`` otherwise
    (use :func:`partition_features` to split off ``HAT``).
    """
    nz, raw, adj = _ci_family(crm, lib, train, test, alpha, spec, test_name, z_columns, marginal,
                              null_design, seed)
    notes = () if nz else ("no nonzero outcome weights; nothing tested",)
    recs = []
    for i, name in enumerate(crm.feature_names):
        if i in nz:
            k = nz.index(i)
            cls = STAR if adj[k] <= alpha else OVERLINE
            recs.append(FeatureRecord(name, float(crm.theta[i]), float(raw[k]), float(adj[k]), cls))
        else:
            recs.append(FeatureRecord(name, float(crm.theta[i]), None, None, TILDE))
    return MediationReport(tuple(recs), alpha, test_name, notes)


def partition_features(crm: CausalResponseModel, lib: FeatureLibrary, train: Dataset, test: Dataset,
                       alpha: float = 0.01, spec: RegressorSpec | str = "forest",
                       test_name: str = "signed_rank", z_columns: Sequence[int] | None = None,
                       marginal: bool = False, null_design: str = "permuted", seed: int = 0) -> MediationReport:
    """Assign every feature to one of ``TILDE``, ``HAT``, ``OVERLINE``, ``STAR``.

    ``STAR`` is exactly the output of :func:`select_mediators`. Among the
    nonzero-weight features that are not mediators, a joint test of
    dependence on ``(w, z)`` (Holm within that family) separates
    ``OVERLINE`` from ``HAT``.
    """
    base = select_mediators(crm, lib, train, test, alpha, spec, test_name, z_columns, marginal,
                            null_design, seed)
    rest = [i for i, r in enumerate(base.records) if r.cls == OVERLINE]
    raw = np.array([joint_test_feature(i, lib, train, test, spec, test_name, z_columns,
                                       check_overlap=False).p_value for i in rest])
    adj = holm_adjust(raw)
    recs = list(base.records)
    for k, i in enumerate(rest):
        cls = OVERLINE if adj[k] <= alpha else HAT
        r = recs[i]
        recs[i] = FeatureRecord(r.name, r.theta, r.p_raw, r.p_adjusted, cls, float(raw[k]), float(adj[k]))
    return MediationReport(tuple(recs), alpha, test_name, base.notes)
