"""Sparse Poisson regression toolkit.

Expands raw covariates into all pairwise interactions, fits L1-penalized
Poisson models along a penalty grid, selects the penalty by nested
stratified cross-validation, pools consensus variables across folds, and
evaluates debiased refits on held-out deviance.
"""

from .design import (
    CATEGORICAL,
    Covariate,
    DataError,
    Dataset,
    DesignMatrix,
    NUMERIC,
    Schema,
    apply_scaling,
    build_design,
    load_csv,
    save_csv,
)
from .glm import (
    FitDiagnostics,
    PoissonModel,
    PredictorOverflowError,
    RankDeficiencyError,
    deviance,
    fit_glm,
    log_likelihood,
    poisson_deviance,
    predict,
)
from .lasso import (
    DegenerateResponseError,
    GridParams,
    LambdaGrid,
    LassoPath,
    compute_lambda_max,
    fit_path,
    make_grid,
    soft_threshold,
)
from .crossval import (
    CvPlan,
    FoldError,
    FrequentSets,
    GROUP,
    NestedCvResult,
    OuterFoldResult,
    PresenceTable,
    QUARTILE,
    ScoreTable,
    evaluate_columns,
    frequent_variables,
    make_plan,
    refit_unpenalized,
    run_nested_cv,
    select_from_scores,
    select_lambdas,
)
from .metrics import (
    PooledPredictions,
    pooled_deviance,
    predictive_power,
    score_ratio,
    weighted_deviance,
)
from .synth import SynthSpec, generate, true_support

__version__ = "0.1.0"

__all__ = [
    "CATEGORICAL",
    "Covariate",
    "CvPlan",
    "DataError",
    "Dataset",
    "DegenerateResponseError",
    "DesignMatrix",
    "FitDiagnostics",
    "FoldError",
    "FrequentSets",
    "GridParams",
    "GROUP",
    "LambdaGrid",
    "LassoPath",
    "NUMERIC",
    "NestedCvResult",
    "OuterFoldResult",
    "PoissonModel",
    "PooledPredictions",
    "PredictorOverflowError",
    "PresenceTable",
    "QUARTILE",
    "RankDeficiencyError",
    "Schema",
    "ScoreTable",
    "SynthSpec",
    "apply_scaling",
    "build_design",
    "compute_lambda_max",
    "deviance",
    "evaluate_columns",
    "fit_glm",
    "fit_path",
    "frequent_variables",
    "generate",
    "load_csv",
    "log_likelihood",
    "make_grid",
    "make_plan",
    "poisson_deviance",
    "pooled_deviance",
    "predict",
    "predictive_power",
    "refit_unpenalized",
    "run_nested_cv",
    "save_csv",
    "score_ratio",
    "select_from_scores",
    "select_lambdas",
    "soft_threshold",
    "true_support",
    "weighted_deviance",
    "__version__",
]
