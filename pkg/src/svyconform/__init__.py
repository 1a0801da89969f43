"""Design-based conformal prediction for complex survey samples.

Finite-sample prediction intervals and label sets whose coverage guarantee
rests on the sampling design alone: simple random, unequal-probability,
stratified, and cluster designs are supported, together with a Monte Carlo
harness that verifies the guarantees empirically on a fixed finite
population.
"""

from ._kernels import BACKEND as kernel_backend
from .conformal import (
    CalibrationContext,
    GridSpec,
    NonExchangeableDesignError,
    PredictionRegion,
    VacuousRegionWarning,
    classification_set,
    cluster_double_conformal,
    cluster_pooled_cdf,
    cluster_repeated_subsample,
    cluster_subsample_once,
    cluster_values,
    full_conformal_interval,
    observed_cluster_interval,
    poststrat_weights,
    response_interval,
    response_upper_bound,
    response_upper_bound_weighted,
    split_interval_exchangeable,
    split_interval_weighted,
    stratified_interval,
    weight_sensitivity,
)
from .designs import DesignKind, DesignSpec, DrawnSample, design_split, draw, test_weights
from .population import (
    ColumnSchema,
    FinitePopulation,
    SyntheticPopSpec,
    discretize_response,
    generate_population,
    load_population,
    write_population,
)
from .quantiles import (
    INFINITY,
    NEG_INFINITY,
    PaddedQuantileQuery,
    conformal_quantile_unweighted,
    conformal_quantile_weighted,
    normalize_shift_weights,
    weighted_quantile_no_pad,
)
from .scores import (
    ABS_RESIDUAL,
    ONE_MINUS_PROB,
    CollinearDesignError,
    ScoreModel,
    WeightedScores,
    constant_model,
    fit_multinomial_logit,
    fit_ols,
    score,
    score_batch,
)
from .simharness import (
    Band,
    CoverageReport,
    ExperimentConfig,
    MethodResult,
    MethodSpec,
    PopulationSource,
    check_bands,
    emit_report,
    naive_quantile_baseline,
    run_experiment,
)

__version__ = "0.1.0"
