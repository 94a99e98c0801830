import numpy as np
import pytest

from pragmed.dataset import Dataset
from pragmed.errors import ConfigError, DataError
from pragmed.estimator import CausalResponseModel
from pragmed.features import identity_library
from pragmed.mediation import (
    HAT,
    OVERLINE,
    STAR,
    TILDE,
    ci_test_feature,
    conditional_permutation,
    joint_test_feature,
    partition_features,
    select_mediators,
)
from pragmed.regress import RegressorSpec
from pragmed.simgen import ImgPertConfig, make_benchmark

SMALL_FOREST = RegressorSpec("forest", {"n_trees": 30})


def z_only_draw(seed, n):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 1))
    w = rng.standard_normal((n, 1)) + 0.5 * z
    x = np.sin(2 * z)
    return Dataset(np.zeros(n), w, z, x, None)


def test_null_calibration_deterministic_z_feature():
    lib = identity_library(1)
    p = np.array([ci_test_feature(0, lib, z_only_draw(2 * s, 1000), z_only_draw(2 * s + 1, 100), "ols").p_value
                  for s in range(500)])
    assert np.mean(p <= 0.01) <= 0.02


def w_driven_draw(seed, n):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, 1))
    z = rng.standard_normal((n, 1))
    x = w + rng.standard_normal((n, 1))
    return Dataset(np.zeros(n), w, z, x, None)


def test_power_for_w_driven_feature():
    lib = identity_library(1)
    hits = [ci_test_feature(0, lib, w_driven_draw(2 * s, 500), w_driven_draw(2 * s + 1, 500),
                            SMALL_FOREST).p_value < 0.01 for s in range(20)]
    assert np.mean(hits) >= 0.95


def test_marginal_and_rank_sum_variants():
    lib = identity_library(1)
    tr, te = w_driven_draw(0, 500), w_driven_draw(1, 500)
    assert ci_test_feature(0, lib, tr, te, "ols", marginal=True).p_value < 0.01
    assert ci_test_feature(0, lib, tr, te, "ols", test="rank_sum").p_value < 0.01
    with pytest.raises(ConfigError):
        ci_test_feature(0, lib, tr, te, "ols", test="t_test")
    with pytest.raises(ConfigError):
        ci_test_feature(3, lib, tr, te, "ols")


def test_overlapping_or_empty_splits_rejected():
    lib = identity_library(1)
    d = w_driven_draw(0, 200)
    with pytest.raises(DataError, match="share rows"):
        ci_test_feature(0, lib, d.take(range(150)), d.take(range(100, 200)), "ols")
    with pytest.raises(DataError, match="empty test"):
        ci_test_feature(0, lib, d, d.take([]), "ols")


def test_joint_test_detects_z_dependence():
    lib = identity_library(1)
    tr, te = z_only_draw(0, 500), z_only_draw(1, 500)
    assert joint_test_feature(0, lib, tr, te, SMALL_FOREST).p_value < 1e-6


def four_way_draw(seed, n):
    # x0: zero weight, x1: independent of (w, z), x2: z-driven, x3: w-driven
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 1))
    w = rng.standard_normal((n, 1))
    e = rng.standard_normal((n, 4))
    x = np.column_stack([w[:, 0] + e[:, 0], e[:, 1], 2 * z[:, 0] + 0.5 * e[:, 2], w[:, 0] + z[:, 0] + 0.5 * e[:, 3]])
    return Dataset(np.zeros(n), w, z, x, None)


FOUR_WAY_CRM = CausalResponseModel(0.0, [0.0, 0.4, -0.3, 0.8], 0.05, ("x0", "x1", "x2", "x3"))


def test_four_way_planted_partition():
    lib = identity_library(4)
    truth = [TILDE, HAT, OVERLINE, STAR]
    correct = np.zeros(4)
    for s in range(10):
        rep = partition_features(FOUR_WAY_CRM, lib, four_way_draw(2 * s, 600), four_way_draw(2 * s + 1, 600),
                                 spec=SMALL_FOREST)
        correct += [r.cls == c for r, c in zip(rep.records, truth)]
        sel = select_mediators(FOUR_WAY_CRM, lib, four_way_draw(2 * s, 600), four_way_draw(2 * s + 1, 600),
                               spec=SMALL_FOREST)
        assert rep.mediators == sel.mediators
    assert np.all(correct >= 8)


def test_report_invariants_and_determinism():
    lib = identity_library(4)
    tr, te = four_way_draw(0, 400), four_way_draw(1, 400)
    a = partition_features(FOUR_WAY_CRM, lib, tr, te, spec=SMALL_FOREST)
    b = partition_features(FOUR_WAY_CRM, lib, tr, te, spec=SMALL_FOREST)
    assert a == b and a.to_csv() == b.to_csv()
    groups = a.by_class()
    assert sorted(sum(groups.values(), [])) == sorted(lib.names)
    for r in a.records:
        assert (r.cls == TILDE) == (r.theta == 0.0)
        if r.cls == STAR:
            assert r.p_adjusted <= a.alpha
    assert set(a.mediators) <= {n for n, t in zip(FOUR_WAY_CRM.feature_names, FOUR_WAY_CRM.theta) if t != 0}


def test_zero_theta_runs_no_tests():
    lib = identity_library(4)
    crm = CausalResponseModel(1.0, np.zeros(4), 0.05, ("x0", "x1", "x2", "x3"))
    rep = select_mediators(crm, lib, four_way_draw(0, 100), four_way_draw(1, 100), spec="ols")
    assert rep.mediators == [] and all(r.p_raw is None for r in rep.records)
    assert "nothing tested" in rep.notes[0]


def test_alpha_one_keeps_every_weighted_feature():
    lib = identity_library(4)
    rep = select_mediators(FOUR_WAY_CRM, lib, four_way_draw(0, 200), four_way_draw(1, 200), alpha=1.0, spec="ols")
    assert rep.mediators == ["x1", "x2", "x3"]
    with pytest.raises(ConfigError):
        select_mediators(FOUR_WAY_CRM, lib, four_way_draw(0, 200), four_way_draw(1, 200), alpha=0.0)


def test_library_mismatch():
    with pytest.raises(DataError):
        select_mediators(FOUR_WAY_CRM, identity_library(4).subset([1, 0, 2, 3]),
                         four_way_draw(0, 50), four_way_draw(1, 50), spec="ols")


def test_csv_and_summary_format(tmp_path):
    lib = identity_library(4)
    rep = partition_features(FOUR_WAY_CRM, lib, four_way_draw(0, 300), four_way_draw(1, 300), spec="ols")
    lines = rep.to_csv().splitlines()
    assert lines[0] == "feature,theta,p_raw,p_adj,class"
    assert lines[1] == "x0,0,,,TILDE"
    assert len(lines) == 5
    rep.write(tmp_path)
    assert (tmp_path / "mediation.csv").read_text() == rep.to_csv()
    assert "mediators:" in (tmp_path / "mediation.txt").read_text()


def test_holm_familywise_error_under_complete_null():
    names = tuple(f"x{i}" for i in range(5))
    crm = CausalResponseModel(0.0, np.ones(5), 0.05, names)
    lib = identity_library(5)

    def draw(seed, n):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((n, 1))
        return Dataset(np.zeros(n), rng.standard_normal((n, 1)), z, z + rng.standard_normal((n, 5)), None)

    trials = 300
    errors = sum(bool(select_mediators(crm, lib, draw(2 * s, 500), draw(2 * s + 1, 60), 0.05, "ols").mediators)
                 for s in range(trials))
    assert errors / trials <= 0.05 + 3 * np.sqrt(0.05 * 0.95 / trials)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_benchmark_phi4_is_not_w_dependent(seed):
    hist, _, gen = make_benchmark(ImgPertConfig(n=4000, seed=seed), n_new=10)
    lib = gen.library()
    tr, te = hist.take(range(2000)), hist.take(range(2000, 4000))
    res = ci_test_feature(3, lib, tr, te, "forest", z_columns=[100])
    assert res.p_value > 0.01
    assert ci_test_feature(0, lib, tr, te, "forest", z_columns=[100]).p_value < 0.01


def test_permuted_null_keeps_forest_calibrated_on_noise():
    # a pure-noise feature: the literal z-only null loses to the wider alternative forest
    lib = identity_library(4)
    rates = {}
    for design in ("permuted", "drop"):
        p = [ci_test_feature(1, lib, four_way_draw(2 * s, 600), four_way_draw(2 * s + 1, 600), SMALL_FOREST,
                             null_design=design, seed=s).p_value for s in range(20)]
        rates[design] = np.mean(np.array(p) <= 0.01)
    assert rates["permuted"] <= 0.05
    assert rates["drop"] > rates["permuted"]
    with pytest.raises(ConfigError):
        ci_test_feature(1, lib, four_way_draw(0, 50), four_way_draw(1, 50), "ols", null_design="other")


def test_conditional_permutation_respects_strata():
    rng = np.random.default_rng(0)
    z = rng.integers(0, 5, (400, 1)).astype(float)
    p = conditional_permutation(z, np.random.default_rng(1))
    assert np.array_equal(np.sort(p), np.arange(400))
    assert np.array_equal(z[p], z) and not np.array_equal(p, np.arange(400))
    # continuous z: swaps stay within blocks of 10 along the sorted order
    zc = rng.standard_normal((95, 1))
    pc = conditional_permutation(zc, np.random.default_rng(2))
    rank = np.empty(95, dtype=int)
    rank[np.argsort(zc[:, 0], kind="stable")] = np.arange(95)
    assert np.array_equal(np.sort(pc), np.arange(95))
    assert np.array_equal(rank[pc] // 10, rank // 10) or np.array_equal((94 - rank[pc]) // 10, (94 - rank) // 10)
    assert np.array_equal(np.sort(conditional_permutation(np.empty((7, 0)), rng)), np.arange(7))
