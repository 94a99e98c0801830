"""Causal response estimation for crude interventions via pragmatic mediators."""

__version__ = "0.1.0"

from .dataset import Dataset, Schema, SplitSpec, load_csv, make_new_regime_splits, save_csv
from .errors import ConfigError, ContractError, DataError, NumericError, PragmedError
from .estimator import (
    CausalResponseModel,
    StageOneModel,
    adapt_stage_one,
    fit_stage_one,
    fit_stage_two,
    predict_do,
    predict_do_batch,
)
from .features import FeatureLibrary, quadrant_library
from .harness import ExperimentConfig, ResultTable, emit_report, run_theta_trials
from .mediation import MediationReport, partition_features, select_mediators
from .regress import RegressorSpec
from .simgen import ImgPertConfig, gen_imgpert, gen_linear_gaussian, make_benchmark, sample_theta_trial

__all__ = [
    "__version__",
    "Dataset", "Schema", "SplitSpec", "load_csv", "make_new_regime_splits", "save_csv",
    "ConfigError", "ContractError", "DataError", "NumericError", "PragmedError",
    "CausalResponseModel", "StageOneModel", "adapt_stage_one", "fit_stage_one", "fit_stage_two",
    "predict_do", "predict_do_batch",
    "FeatureLibrary", "quadrant_library",
    "ExperimentConfig", "ResultTable", "emit_report", "run_theta_trials",
    "MediationReport", "partition_features", "select_mediators",
    "RegressorSpec",
    "ImgPertConfig", "gen_imgpert", "gen_linear_gaussian", "make_benchmark", "sample_theta_trial",
]
