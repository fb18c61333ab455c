"""Stratified Cox proportional hazards models with lasso fitting and
de-biased inference via per-coordinate quadratic programming."""

__version__ = "0.1.0"

from .dataset import (
    CsvSchema,
    FoldAssignment,
    RiskSetIndex,
    StratifiedSurvivalDataset,
    StratumBlock,
    assign_folds,
    build_risk_index,
    load_csv,
    split_fold,
    write_csv,
)
from .likelihood import (
    BaselineHazard,
    DerivativeBundle,
    WeightedAverages,
    breslow_baseline,
    derivative_bundle,
    hessian,
    neg_log_partial_likelihood,
    score,
    sigma_hat,
    weighted_averages,
)

__all__ = [
    "__version__",
    "CsvSchema",
    "FoldAssignment",
    "RiskSetIndex",
    "StratifiedSurvivalDataset",
    "StratumBlock",
    "assign_folds",
    "build_risk_index",
    "load_csv",
    "split_fold",
    "write_csv",
    "BaselineHazard",
    "DerivativeBundle",
    "WeightedAverages",
    "breslow_baseline",
    "derivative_bundle",
    "hessian",
    "neg_log_partial_likelihood",
    "score",
    "sigma_hat",
    "weighted_averages",
]
