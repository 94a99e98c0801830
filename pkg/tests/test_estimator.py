import numpy as np
import pytest

from pragmed.dataset import Dataset
from pragmed.errors import ConfigError, ContractError, DataError
from pragmed.estimator import (
    CausalResponseModel,
    StageOneModel,
    adapt_stage_one,
    fit_stage_one,
    fit_stage_two,
    load_pipeline,
    predict_do,
    predict_do_batch,
    save_pipeline,
    stage_one_oof,
)
from pragmed.features import Builtin, FeatureLibrary, identity_library
from pragmed.regress import LinearModel, MultiOutputModel, RegressorSpec, fit_regressor
from pragmed.simgen import BENCHMARK_THETA, ImgPertConfig, gen_linear_gaussian, make_benchmark

from oracles import expected_feature_matrix

FAST_FOREST = RegressorSpec("forest", {"n_trees": 20})


def constant_stage_one(values, d_w=1, d_z=1):
    models = tuple(LinearModel(float(v), np.zeros(d_w + d_z), np.zeros(d_w + d_z), np.ones(d_w + d_z), "ols")
                   for v in values)
    names = tuple(f"phi{i + 1}" for i in range(len(values)))
    return StageOneModel(MultiOutputModel(models, RegressorSpec("ols")), d_w, d_z, None, names)


def test_predict_do_arithmetic():
    crm = CausalResponseModel(1.0, [0.7, 0.0, 0.0, -0.5], 0.05, ("phi1", "phi2", "phi3", "phi4"))
    g = constant_stage_one([2.0, 5.0, 5.0, 2.0])
    assert predict_do(crm, g, [3.0], [1.0]) == pytest.approx(1.4, abs=1e-12)


def test_zero_theta_predicts_intercept():
    crm = CausalResponseModel(-2.5, np.zeros(3), 0.1, ("phi1", "phi2", "phi3"))
    g = constant_stage_one([1.0, 2.0, 3.0])
    assert np.all(predict_do_batch(crm, g, np.ones((5, 1)), np.ones((5, 1))) == -2.5)


def test_prediction_is_affine_in_g():
    rng = np.random.default_rng(0)
    crm = CausalResponseModel(0.3, rng.standard_normal(4), 0.05, tuple("abcd"))
    G = rng.standard_normal((10, 4))
    assert np.allclose(crm.predict(3.0 * G) - 0.3, 3.0 * (crm.predict(G) - 0.3), atol=1e-12)


def test_dimension_mismatch():
    crm = CausalResponseModel(0.0, [1.0, 1.0], 0.05, ("phi1", "phi2"))
    g = constant_stage_one([1.0, 2.0])
    with pytest.raises(DataError):
        predict_do(crm, g, [1.0, 2.0], [1.0])
    with pytest.raises(DataError):
        crm.predict(np.ones((2, 3)))
    with pytest.raises(DataError):
        CausalResponseModel(0.0, [1.0], 0.05, ("a", "b"))


def test_stage_one_reproduces_planted_identity():
    rng = np.random.default_rng(1)
    n = 5000
    w = rng.uniform(0, 4, (n, 1))
    z = rng.standard_normal((n, 2))
    x = np.column_stack([w[:, 0], rng.standard_normal(n)])
    d = Dataset(np.zeros(n), w, z, x, rng.standard_normal(n))
    # every split considers all inputs, so the noise columns of z cannot crowd out w
    g = fit_stage_one(d, identity_library(2).subset([0]), RegressorSpec("forest", {"max_features": 3}))
    wt = rng.uniform(0, 4, (500, 1))
    pred = g.predict_g(wt, rng.standard_normal((500, 2)))[:, 0]
    assert np.mean((pred - wt[:, 0]) ** 2) < 1e-3


def test_stage_one_constant_feature_with_ols_standard_errors():
    # phi independent of (w, z): the fitted mean stays within 3 standard errors of 0
    rng = np.random.default_rng(2)
    n = 3000
    w, z = rng.standard_normal((n, 1)), rng.standard_normal((n, 2))
    d = Dataset(np.zeros(n), w, z, rng.standard_normal((n, 1)), rng.standard_normal(n))
    g = fit_stage_one(d, identity_library(1), "ols")
    A = np.column_stack([np.ones(n), w, z])
    cov = np.linalg.inv(A.T @ A)
    pts = np.column_stack([np.ones(20), rng.uniform(-2, 2, (20, 3))])
    se = np.sqrt(np.einsum("ij,jk,ik->i", pts, cov, pts))
    pred = g.predict_g(pts[:, 1:2], pts[:, 2:])[:, 0]
    assert np.all(np.abs(pred) < 3 * se)


def test_single_feature_equals_direct_fit():
    d, truth = gen_linear_gaussian(1, 2, 3, 1, 300, seed=3)
    lib = truth.library()
    g = fit_stage_one(d, lib, FAST_FOREST)
    direct = fit_regressor(np.hstack([d.w, d.z]), lib.evaluate_dataset(d)[:, 0], FAST_FOREST)
    assert g.d == 1
    assert np.array_equal(g.predict_dataset(d)[:, 0], direct.predict(np.hstack([d.w, d.z])))


def test_stage_one_errors():
    d, truth = gen_linear_gaussian(1, 2, 3, 2, 50, seed=4)
    with pytest.raises(DataError):
        fit_stage_one([], truth.library())
    with pytest.raises(DataError):
        fit_stage_one(d.strip_labels(), truth.library())
    with pytest.raises(DataError):
        fit_stage_one(d, identity_library(5))
    with pytest.raises(ConfigError):
        fit_stage_one(d, truth.library(), z_columns=[7])


def test_out_of_fold_rows_never_seen():
    # with OLS on a single exact line every fold recovers it, so oof == in-sample
    rng = np.random.default_rng(5)
    n = 100
    w = rng.standard_normal((n, 1))
    d = Dataset(np.zeros(n), w, rng.standard_normal((n, 1)), 2 * w + 1, rng.standard_normal(n))
    G = stage_one_oof(d, identity_library(1), "ols", k=5)
    assert np.allclose(G[:, 0], 2 * w[:, 0] + 1)
    with pytest.raises(DataError):
        stage_one_oof(d.take(range(3)), identity_library(1), "ols", k=5)


@pytest.fixture(scope="module")
def bench():
    cfg = ImgPertConfig(n=10_000, seed=11)
    hist, new, gen = make_benchmark(cfg)
    return hist, new, gen


def test_oracle_stage_two_recovers_benchmark_weights(bench):
    hist, _, gen = bench
    lib = gen.library()
    G = expected_feature_matrix(gen, hist.w[:, 0], hist.z[:, 100])
    g = constant_stage_one([0.0] * 4, d_z=101)
    crm = fit_stage_two(g, hist, lib, G=G)
    assert np.all(np.abs(crm.theta - np.array(BENCHMARK_THETA)) <= 0.1)
    assert crm.selected() == ["phi1", "phi4"]


def test_oracle_pipeline_mse_on_benchmark(bench):
    hist, new, gen = bench
    lib = gen.library()
    G = expected_feature_matrix(gen, hist.w[:, 0], hist.z[:, 100])
    crm = fit_stage_two(constant_stage_one([0.0] * 4, d_z=101), hist, lib, G=G)
    G_new = expected_feature_matrix(gen, new.w[:, 0], new.z[:, 100])
    truth = G_new @ np.array(BENCHMARK_THETA)
    assert np.mean((crm.predict(G_new) - truth) ** 2) < 0.05


def test_pure_noise_outcome_gives_empty_support():
    hits = 0
    for seed in range(10):
        d, truth = gen_linear_gaussian(1, 2, 4, 3, 2000, seed=seed)
        d = d.with_y(np.random.default_rng(seed + 100).standard_normal(d.n))
        G = truth.cond_expectation(d.w, d.z)
        crm = fit_stage_two(None, d, truth.library(), G=G, seed=seed)
        hits += crm.support.size == 0
    assert hits >= 9


def test_constant_columns_get_zero_weight():
    d, truth = gen_linear_gaussian(1, 2, 4, 2, 500, seed=6)
    G = np.column_stack([truth.cond_expectation(d.w, d.z), np.full(d.n, 4.0)])
    lib = FeatureLibrary([*truth.library().features, Builtin("c", "constant", value=4.0)])
    for penalty in ("adaptive", "l1"):
        crm = fit_stage_two(None, d, lib, G=G, penalty=penalty)
        assert crm.theta[2] == 0.0


def test_oracle_recovery_improves_with_n():
    def median_error(n):
        errs = []
        for seed in range(10):
            d, truth = gen_linear_gaussian(1, 2, 4, 3, n, seed=seed, theta=[0.6, -0.4, 0.8], noise_x=1.0)
            crm = fit_stage_two(None, d, truth.library(), G=truth.cond_expectation(d.w, d.z), seed=seed)
            errs.append(np.max(np.abs(crm.theta - truth.theta)))
        return np.median(errs)

    assert median_error(10_000) < median_error(1_000)


def test_stage_two_flags_and_errors():
    d, truth = gen_linear_gaussian(1, 2, 4, 3, 400, seed=7)
    G = truth.cond_expectation(d.w, d.z)
    plain = fit_stage_two(None, d, truth.library(), G=G, refit=False, penalty="l1")
    relaxed = fit_stage_two(None, d, truth.library(), G=G, refit=True, penalty="l1")
    assert np.array_equal(plain.support, relaxed.support)
    # the refit removes shrinkage, so coefficients grow in magnitude
    assert np.all(np.abs(relaxed.theta[relaxed.support]) >= np.abs(plain.theta[plain.support]) - 1e-9)
    with pytest.raises(ConfigError):
        fit_stage_two(None, d, truth.library(), G=G, penalty="l2")
    with pytest.raises(DataError):
        fit_stage_two(None, d.take(range(3)), truth.library(), G=G[:3], k_folds=5)
    with pytest.raises(DataError):
        fit_stage_two(None, d, truth.library(), G=G[:, :2])


def test_feature_permutation_permutes_theta_and_keeps_predictions():
    cfg = ImgPertConfig(n=1500, seed=3)
    hist, new, gen = make_benchmark(cfg, n_new=300)
    lib = gen.library()
    perm = [2, 0, 3, 1]
    lib_p = lib.subset(perm)
    g = fit_stage_one(hist, lib, FAST_FOREST, z_columns=[100])
    g_p = fit_stage_one(hist, lib_p, FAST_FOREST, z_columns=[100])
    crm = fit_stage_two(g, hist, lib)
    crm_p = fit_stage_two(g_p, hist, lib_p)
    assert np.array_equal(crm_p.theta, crm.theta[perm])
    gs = adapt_stage_one(g, new.strip_labels(), lib)
    gs_p = adapt_stage_one(g_p, new.strip_labels(), lib_p)
    assert np.array_equal(predict_do_batch(crm, gs, new.w, new.z), predict_do_batch(crm_p, gs_p, new.w, new.z))


def test_adapt_contract_and_constant_treatment():
    cfg = ImgPertConfig(n=800, seed=4)
    hist, new, gen = make_benchmark(cfg, n_new=200)
    lib = gen.library()
    g = fit_stage_one(hist, lib, FAST_FOREST, z_columns=[100])
    with pytest.raises(ContractError):
        adapt_stage_one(g, new, lib)
    with pytest.raises(DataError):
        adapt_stage_one(g, new.take([]).strip_labels(), lib)
    g_star = adapt_stage_one(g, new.strip_labels(), lib)
    assert np.unique(new.w).size == 1
    assert np.all(np.isfinite(g_star.predict_dataset(new)))


def test_adapt_on_same_distribution_agrees_with_historic_fit():
    # correctly specified OLS learners on a linear testbed: compare within 3 standard errors
    d, truth = gen_linear_gaussian(1, 2, 3, 2, 20_000, seed=8)
    d2, _ = gen_linear_gaussian(1, 2, 3, 2, 20_000, seed=9, truth=truth, regime=1)
    lib = truth.library()
    g = fit_stage_one(d, lib, "ols")
    g_star = adapt_stage_one(g, d2.strip_labels(), lib)
    W, Z = np.array([[0.5], [-1.0], [2.0]]), np.array([[0.0, 1.0], [1.0, -1.0], [0.3, 0.3]])
    diff = g_star.predict_g(W, Z) - g.predict_g(W, Z)

    def se(data):
        A = np.column_stack([np.ones(data.n), data.w, data.z])
        resid = lib.evaluate_dataset(data) - np.column_stack([np.ones(data.n), data.w, data.z]) @ \
            np.linalg.lstsq(A, lib.evaluate_dataset(data), rcond=None)[0]
        cov = np.linalg.inv(A.T @ A)
        P = np.column_stack([np.ones(3), W, Z])
        lev = np.einsum("ij,jk,ik->i", P, cov, P)
        return np.sqrt(np.outer(lev, resid.var(axis=0)))

    assert np.all(np.abs(diff) < 3 * np.sqrt(se(d) ** 2 + se(d2) ** 2))


def test_pipeline_round_trip(tmp_path):
    cfg = ImgPertConfig(n=600, seed=5)
    hist, new, gen = make_benchmark(cfg, n_new=100)
    lib = gen.library()
    g = fit_stage_one(hist, lib, FAST_FOREST, z_columns=[100])
    crm = fit_stage_two(g, hist, lib, out_of_fold=False)
    save_pipeline(tmp_path / "m", g, crm, lib)
    g2, crm2, lib2 = load_pipeline(tmp_path / "m")
    assert lib2.names == lib.names and crm2.feature_names == crm.feature_names
    assert np.array_equal(crm2.theta, crm.theta)
    assert np.array_equal(predict_do_batch(crm2, g2, new.w, new.z), predict_do_batch(crm, g, new.w, new.z))
