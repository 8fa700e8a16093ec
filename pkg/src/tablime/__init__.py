"""Tabular LIME with a closed-form limit-explanation engine.

The package implements the full pipeline (quantile discretization, truncated
Gaussian perturbation sampling, weighted ridge surrogate) together with exact
large-sample limit explanations for structured model families and a harness
that verifies the empirical pipeline against the closed forms.
"""

from .grid import BinGrid, bin_id, fit_grid
from .harness import (
    ExperimentConfig,
    concentration_probe,
    default_bandwidth,
    field_map,
    run_experiment,
    sweep_bandwidth,
)
from .models import (
    Additive,
    GaussBump,
    IndicatorRect,
    IntervalIndicator,
    KernelSum,
    KernelTerm,
    Linear,
    Multiplicative,
    Opaque,
    Partition,
    Poly,
    Rectangle,
    fit_cart,
    model_from_json,
    model_to_json,
    refine_partition,
)
from .numerics import (
    TruncNormalParams,
    conditional_expect,
    normal_cdf,
    trunc_normal_sample,
    trunc_normal_stats,
)
from .sampler import PerturbationBatch, WeightVector, sample_batch, weights_default, weights_general
from .surrogate import Explanation, RankDeficientError, fit_surrogate
from .theory import (
    ECoefficients,
    LimitSystem,
    beta_additive,
    beta_general,
    beta_indicator,
    beta_kernel_sum,
    beta_linear,
    beta_multiplicative,
    beta_partition,
    bin_distance,
    c_const,
    e_coefficients,
    kernel_e_coefficients,
    large_bandwidth_limit,
    limit_explanation,
    limit_system,
    relative_importance,
    robustness_bound,
    sample_size_bound,
    unit_e_coefficients,
)

__version__ = "0.1.0"
