"""Regression learners: lasso (with CV), OLS/ridge, random forest, gradient boosting."""

from .base import (
    DEFAULTS,
    KINDS,
    FittedRegressor,
    MultiOutputModel,
    RegressorSpec,
    dumps_model,
    fit_multi_output,
    fit_regressor,
    loads_model,
    model_from_dict,
    model_to_dict,
)
from .ensemble import BoostModel, ForestModel, Tree, fit_forest, fit_gboost
from .linear import (
    LinearModel,
    cv_lasso,
    default_lambda_grid,
    fit_lasso,
    fit_ols,
    fit_ridge,
    lasso_kkt_violation,
)

__all__ = [
    "DEFAULTS", "KINDS", "FittedRegressor", "MultiOutputModel", "RegressorSpec",
    "dumps_model", "fit_multi_output", "fit_regressor", "loads_model",
    "model_from_dict", "model_to_dict", "BoostModel", "ForestModel", "Tree",
    "fit_forest", "fit_gboost", "LinearModel", "cv_lasso", "default_lambda_grid",
    "fit_lasso", "fit_ols", "fit_ridge", "lasso_kkt_violation",
]
