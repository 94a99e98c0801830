import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pragmed.errors import ConfigError, DataError
from pragmed.regress import (
    RegressorSpec,
    cv_lasso,
    default_lambda_grid,
    dumps_model,
    fit_forest,
    fit_gboost,
    fit_lasso,
    fit_multi_output,
    fit_ols,
    fit_regressor,
    fit_ridge,
    lasso_kkt_violation,
    loads_model,
)


def soft_threshold_1d(x, y, lam):
    """Closed-form 1-D lasso on the standardized column, mapped back."""
    xs = (x - x.mean()) / x.std()
    rho = xs @ (y - y.mean()) / x.size
    beta = np.sign(rho) * max(abs(rho) - lam, 0.0)
    return beta / x.std()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 2.0))
def test_lasso_1d_soft_threshold(seed, lam):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(40) * rng.uniform(0.5, 3)
    y = 0.8 * x + rng.standard_normal(40)
    m = fit_lasso(x.reshape(-1, 1), y, lam)
    assert m.coef[0] == pytest.approx(soft_threshold_1d(x, y, lam), abs=1e-8)


@pytest.mark.parametrize("seed", range(10))
def test_lasso_kkt(seed):
    rng = np.random.default_rng(seed)
    n, p = 60, 8
    X = rng.standard_normal((n, p)) @ rng.standard_normal((p, p))
    y = X[:, :3] @ [1.0, -2.0, 0.5] + rng.standard_normal(n)
    for lam in (0.01, 0.1, 0.5):
        assert lasso_kkt_violation(fit_lasso(X, y, lam), X, y) < 1e-5


def test_lasso_zero_at_lambda_max():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((50, 4))
    y = X @ [0.1, 0.0, 0.2, 0.0] + 0.1 * rng.standard_normal(50)
    Xs = (X - X.mean(0)) / X.std(0)
    lam_max = np.max(np.abs(Xs.T @ (y - y.mean()))) / 50
    assert np.all(fit_lasso(X, y, lam_max * 1.0001).coef == 0)
    assert np.any(fit_lasso(X, y, lam_max * 0.9).coef != 0)


def test_lasso_lambda_zero_is_ols():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((80, 3))
    y = X @ [1.0, 2.0, -1.0] + 0.3 + rng.standard_normal(80)
    A = np.column_stack([np.ones(80), X])
    ref = np.linalg.lstsq(A, y, rcond=None)[0]
    m = fit_lasso(X, y, 0.0)
    assert np.allclose(m.coef, ref[1:], atol=1e-5)
    o = fit_ols(X, y)
    assert np.allclose(o.coef, ref[1:], atol=1e-10) and o.intercept == pytest.approx(ref[0], abs=1e-10)


def test_ridge_normal_equations():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((40, 3))
    y = rng.standard_normal(40)
    lam = 0.7
    Xs = (X - X.mean(0)) / X.std(0)
    beta = np.linalg.solve(Xs.T @ Xs / 40 + lam * np.eye(3), Xs.T @ (y - y.mean()) / 40)
    assert np.allclose(fit_ridge(X, y, lam).coef, beta / X.std(0), atol=1e-12)


def test_constant_column_gets_zero():
    rng = np.random.default_rng(4)
    X = np.column_stack([rng.standard_normal(30), np.full(30, 3.0)])
    y = X[:, 0] + rng.standard_normal(30)
    assert fit_lasso(X, y, 0.01).coef[1] == 0.0
    assert fit_ols(X, y).coef[1] == 0.0


def test_penalty_weights():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((100, 3))
    y = X @ [1.0, 1.0, 1.0] + rng.standard_normal(100)
    m = fit_lasso(X, y, 0.2, penalty_weights=[0.0, 1.0, np.inf])
    assert m.coef[2] == 0.0
    assert lasso_kkt_violation(m, X, y) < 1e-5
    unpen = fit_lasso(X, y, 0.2, penalty_weights=[0.0, 0.0, 0.0])
    assert np.allclose(unpen.coef, fit_ols(X, y).coef, atol=1e-5)
    with pytest.raises(ConfigError):
        fit_lasso(X, y, 0.2, penalty_weights=[1.0, -1.0, 1.0])


def test_cv_lasso_picks_grid_value_and_refits():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((200, 5))
    y = X[:, 0] * 2 + rng.standard_normal(200)
    lam, model, cv = cv_lasso(X, y, k=5, seed=0)
    grid = default_lambda_grid()
    assert lam in grid and cv.shape == grid.shape
    assert lam == grid[np.argmin(cv)]
    assert np.allclose(model.coef, fit_lasso(X, y, lam).coef)
    assert grid.min() == pytest.approx(0.05) and grid.max() == pytest.approx(1.0)


def test_cv_lasso_errors():
    with pytest.raises(DataError):
        cv_lasso(np.zeros((3, 1)), np.zeros(3), k=5)
    with pytest.raises(ConfigError):
        cv_lasso(np.ones((10, 1)), np.zeros(10), lambda_grid=[])


def test_forest_fits_step_function():
    rng = np.random.default_rng(7)
    X = rng.uniform(-1, 1, (600, 2))
    y = np.where(X[:, 0] > 0, 1.0, -1.0) + 0.1 * rng.standard_normal(600)
    f = fit_forest(X, y, n_trees=30, seed=0)
    Xt = rng.uniform(-1, 1, (300, 2))
    truth = np.where(Xt[:, 0] > 0, 1.0, -1.0)
    assert np.mean((f.predict(Xt) - truth) ** 2) < 0.05


def test_forest_constant_target_exact():
    X = np.random.default_rng(0).standard_normal((50, 3))
    f = fit_forest(X, np.full(50, 0.3), n_trees=5)
    assert np.all(f.predict(X) == 0.3)


def test_forest_deterministic_and_seed_sensitive():
    rng = np.random.default_rng(8)
    X, y = rng.standard_normal((100, 3)), rng.standard_normal(100)
    a = fit_forest(X, y, n_trees=10, seed=1).predict(X)
    b = fit_forest(X, y, n_trees=10, seed=1, n_jobs=2).predict(X)
    c = fit_forest(X, y, n_trees=10, seed=2).predict(X)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_gboost_loss_decreases():
    rng = np.random.default_rng(9)
    X = rng.uniform(-2, 2, (300, 1))
    y = X[:, 0] ** 2
    m = fit_gboost(X, y, n_rounds=50)
    assert len(m.train_loss) == 51
    assert np.all(np.diff(m.train_loss) <= 1e-12)
    assert m.train_loss[-1] < 0.01 * m.train_loss[0]


@pytest.mark.parametrize("kind", ["ols", "ridge", "lasso", "forest", "gboost"])
def test_serialization_round_trip(kind):
    rng = np.random.default_rng(10)
    X, y = rng.standard_normal((60, 3)), rng.standard_normal(60)
    spec = RegressorSpec(kind, {"n_trees": 5} if kind == "forest" else {})
    m = fit_regressor(X, y, spec)
    back = loads_model(dumps_model(m))
    assert np.array_equal(back.predict(X), m.predict(X))


def test_multi_output_round_trip_and_permutation():
    rng = np.random.default_rng(11)
    X, Y = rng.standard_normal((80, 2)), rng.standard_normal((80, 3))
    spec = RegressorSpec("forest", {"n_trees": 8})
    m = fit_multi_output(X, Y, spec)
    assert m.predict(X).shape == (80, 3)
    assert np.array_equal(loads_model(dumps_model(m)).predict(X), m.predict(X))
    perm = fit_multi_output(X, Y[:, [2, 0, 1]], spec)
    assert np.array_equal(perm.predict(X), m.predict(X)[:, [2, 0, 1]])


def test_spec_validation():
    with pytest.raises(ConfigError):
        RegressorSpec("svm")
    with pytest.raises(ConfigError):
        RegressorSpec("forest", {"depth": 3})
    with pytest.raises(ConfigError):
        loads_model(json.dumps({"format": "pragmed-model", "version": 99, "model": {}}))


def test_soft_threshold_worked_example():
    # standardized column with OLS slope 2.0: lambda=0.5 leaves 1.5
    x = np.array([-1.0, 1.0] * 20)
    y = 2.0 * x + 4.0
    m = fit_lasso(x[:, None], y, 0.5)
    assert m.coef[0] == pytest.approx(1.5, abs=1e-12)


def test_full_shrinkage_intercept_is_mean():
    rng = np.random.default_rng(12)
    X, y = rng.standard_normal((40, 3)), rng.standard_normal(40) + 2.0
    m = fit_lasso(X, y, 10.0)
    assert np.all(m.coef == 0) and m.intercept == pytest.approx(y.mean(), abs=1e-12)


def test_cv_lasso_null_picks_grid_max():
    # n large enough that chance correlations stay near the grid minimum 0.05
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X, y = rng.standard_normal((1000, 5)), rng.standard_normal(1000)
        lam, model, _ = cv_lasso(X, y, seed=seed)
        hits += lam == default_lambda_grid().max() and np.count_nonzero(model.coef) <= 1
    assert hits >= 9


def test_cv_lasso_planted_signal():
    rng = np.random.default_rng(13)
    X = rng.standard_normal((300, 4))
    y = 3.0 * X[:, 0] + 0.01 * rng.standard_normal(300)
    _, m, _ = cv_lasso(X, y)
    assert abs(m.coef[0] - 3.0) < 0.1 and np.all(m.coef[1:] == 0)


def test_cv_lasso_leave_one_out():
    rng = np.random.default_rng(14)
    X, y = rng.standard_normal((15, 2)), rng.standard_normal(15)
    _, _, cv = cv_lasso(X, y, k=15)
    assert np.all(np.isfinite(cv))


def test_lasso_path_sparsity_monotone():
    rng = np.random.default_rng(15)
    X = rng.standard_normal((100, 8))
    y = X @ rng.standard_normal(8) + rng.standard_normal(100)
    counts = [np.count_nonzero(fit_lasso(X, y, lam).coef) for lam in default_lambda_grid()]
    assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_tree_learners_beat_the_mean_in_sample():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 60))
        X, y = rng.standard_normal((n, 3)), rng.standard_normal(n)
        base = np.mean((y - y.mean()) ** 2)
        assert np.mean((fit_forest(X, y, n_trees=5, seed=seed).predict(X) - y) ** 2) <= base + 1e-12
        assert np.mean((fit_gboost(X, y, n_rounds=5).predict(X) - y) ** 2) <= base + 1e-12


def test_gboost_base_case_and_square():
    rng = np.random.default_rng(16)
    X = rng.uniform(-1, 1, (2000, 1))
    y = X[:, 0] ** 2
    stump = fit_gboost(X, y, n_rounds=1, max_depth=0)
    assert np.allclose(stump.predict(X), y.mean())
    Xt = rng.uniform(-1, 1, (500, 1))
    assert np.mean((fit_gboost(X, y).predict(Xt) - Xt[:, 0] ** 2) ** 2) < 0.01


def test_multi_output_reduces_to_single_fits():
    rng = np.random.default_rng(17)
    X, Y = rng.standard_normal((70, 3)), rng.standard_normal((70, 2))
    spec = RegressorSpec("forest", {"n_trees": 6})
    multi = fit_multi_output(X, Y, spec)
    for j in range(2):
        assert np.array_equal(multi.predict(X)[:, j], fit_regressor(X, Y[:, j], spec).predict(X))
    with pytest.raises(DataError):
        fit_multi_output(X, np.empty((70, 0)), spec)
