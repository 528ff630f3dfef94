"""Survival modelling: C-index, Cox regression, MRMR and repeated cross-validation."""
from .cindex import (
    NoComparablePairsError,
    SurvivalRecord,
    cindex_columns,
    comparable_pairs,
    fold_cindex,
    harrell_cindex,
)
from .cox import CollinearityError, CoxModel, cox_fit, efron_loglik, univariate_cox
from .cv import (
    CCC_THRESHOLDS,
    FEATURE_COUNTS,
    SUMMARY_COLUMNS,
    CVConfig,
    GridSpec,
    PerformanceSummary,
    SurvivalDesign,
    build_design,
    load_grid,
    run_cv,
    run_cv_counts,
    run_grid,
    stratified_folds,
)
from .mrmr import mrmr_select

__all__ = [
    "NoComparablePairsError",
    "SurvivalRecord",
    "cindex_columns",
    "comparable_pairs",
    "fold_cindex",
    "harrell_cindex",
    "CollinearityError",
    "CoxModel",
    "cox_fit",
    "efron_loglik",
    "univariate_cox",
    "CCC_THRESHOLDS",
    "FEATURE_COUNTS",
    "SUMMARY_COLUMNS",
    "CVConfig",
    "GridSpec",
    "PerformanceSummary",
    "SurvivalDesign",
    "build_design",
    "load_grid",
    "run_cv",
    "run_cv_counts",
    "run_grid",
    "stratified_folds",
    "mrmr_select",
]
