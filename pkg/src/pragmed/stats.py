"""One-sided Wilcoxon tests and Holm's step-down adjustment.

Both Wilcoxon variants use average ranks for ties. For small samples the
null distribution of the statistic is computed exactly: ranks are doubled
(so mid-ranks become integers) and the distribution is built by dynamic
programming over the generating polynomial, which counts every sign
pattern / rank assignment once. Larger samples use the normal
approximation with continuity correction and tie-corrected variance.

p-values are upper-tail and inclusive: ``p = P(T >= t_obs)`` under the null.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .errors import DataError

__all__ = [
    "TestResult",
    "EXACT_CUTOFF",
    "wilcoxon_signed_rank_one_sided",
    "wilcoxon_rank_sum_one_sided",
    "holm_adjust",
]

EXACT_CUTOFF = 12


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n_effective: int
    method: str
    exact: bool

    __test__ = False  # not a pytest class


def _upper_tail(counts: np.ndarray, observed2: int) -> float:
    """P(T2 >= observed2) from an integer-indexed count table."""
    total = counts.sum()
    tail = counts[observed2:].sum() if observed2 < counts.size else 0.0
    return float(min(1.0, tail / total))


def _signed_rank_counts(ranks2: np.ndarray) -> np.ndarray:
    """Counts of W2 = sum of doubled ranks carrying a '+' over all 2^n sign patterns."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in ranks2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    return counts


def _rank_sum_counts(ranks2: np.ndarray, n_a: int) -> np.ndarray:
    """Counts of the doubled rank sum over all size-``n_a`` subsets of the pooled ranks."""
    total = int(ranks2.sum())
    # table[k, s]: number of k-subsets with doubled rank sum s
    table = np.zeros((n_a + 1, total + 1))
    table[0, 0] = 1.0
    for r in ranks2:
        for k in range(min(n_a, table.shape[0] - 1), 0, -1):
            table[k, r:] += table[k - 1, :total + 1 - r]
    return table[n_a]


def _use_exact(mode: str, n: int) -> bool:
    if mode == "auto":
        return n <= EXACT_CUTOFF
    if mode in ("exact", "normal"):
        return mode == "exact"
    raise DataError(f"unknown mode {mode!r}; use 'auto', 'exact' or 'normal'")


def wilcoxon_signed_rank_one_sided(a, b, mode: str = "auto") -> TestResult:
    """Paired signed-rank test of ``median(a - b) > 0``.

    Zero differences are dropped. With ``mode="auto"`` the null
    distribution is exact when at most 12 nonzero differences remain,
    otherwise the tie-corrected normal approximation with continuity
    correction is used. ``"exact"`` and ``"normal"`` force one or the other.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DataError(f"paired samples differ in length: {a.size} vs {b.size}")
    if a.size == 0:
        raise DataError("paired samples are empty")
    d = a - b
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return TestResult(0.0, 1.0, 0, "wilcoxon_signed_rank", True)
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if _use_exact(mode, n):
        ranks2 = np.rint(2 * ranks).astype(np.int64)
        counts = _signed_rank_counts(ranks2)
        p = _upper_tail(counts, int(round(2 * w_plus)))
        return TestResult(w_plus, p, n, "wilcoxon_signed_rank", True)
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    if var <= 0:
        return TestResult(w_plus, 1.0, n, "wilcoxon_signed_rank", False)
    zval = (w_plus - mean - 0.5) / np.sqrt(var)
    p = float(ndtr(-zval))
    return TestResult(w_plus, min(1.0, max(0.0, p)), n, "wilcoxon_signed_rank", False)


def wilcoxon_rank_sum_one_sided(a, b, mode: str = "auto") -> TestResult:
    """Two-sample rank-sum test that ``a`` is stochastically larger than ``b``.

    The statistic is the sum of the pooled (average) ranks of ``a``. With
    ``mode="auto"`` it is exact when ``len(a) + len(b) <= 12``.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise DataError("rank-sum test needs two nonempty samples")
    n_a, n_b = a.size, b.size
    N = n_a + n_b
    ranks = rankdata(np.concatenate([a, b]))
    stat = float(ranks[:n_a].sum())
    if _use_exact(mode, N):
        ranks2 = np.rint(2 * ranks).astype(np.int64)
        counts = _rank_sum_counts(ranks2, n_a)
        p = _upper_tail(counts, int(round(2 * stat)))
        return TestResult(stat, p, N, "wilcoxon_rank_sum", True)
    mean = n_a * (N + 1) / 2.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / (N * (N - 1))
    var = n_a * n_b / 12.0 * ((N + 1) - tie_term)
    if var <= 0:
        return TestResult(stat, 1.0, N, "wilcoxon_rank_sum", False)
    zval = (stat - mean - 0.5) / np.sqrt(var)
    p = float(ndtr(-zval))
    return TestResult(stat, min(1.0, max(0.0, p)), N, "wilcoxon_rank_sum", False)


def holm_adjust(p) -> np.ndarray:
    """Holm step-down adjusted p-values, returned in the input order."""
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size == 0:
        return p.copy()
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise DataError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = np.minimum(1.0, (m - np.arange(m)) * p[order])
    adjusted = np.maximum.accumulate(scaled)
    out = np.empty(m)
    out[order] = adjusted
    return out
