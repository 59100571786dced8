"""Covariate-dependent extreme value index estimation with marginal screening.

Pipeline: rank the covariates by how much their conditional Pickands curve
departs from the unconditional estimate, pick a model size from the top of
that ranking, build a single index by tail quantile regression, and fit a
kernel-weighted generalized Pareto model along the index.
"""

from __future__ import annotations

from .core import Dataset, empirical_quantile, l_gamma, rank_transform, rank_transform_matrix
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    EstimationError,
    EvtScreenError,
)
from .evi import EviEstimate, aux_scale, pickands_conditional, pickands_curve, pickands_unconditional
from .gp import (
    GpParams,
    LocalGpFit,
    extrapolated_quantile,
    fit_gp_curve,
    fit_gp_local,
    gp_log_density,
    loo_thresholds,
)
from .kernels import (
    EPANECHNIKOV,
    GAUSSIAN,
    KernelConditional,
    KernelSpec,
    conditional_cdf,
    conditional_quantile,
    kernel_weight,
    loo_conditional_quantile,
)
from .screening import ScreeningResult, active_set_threshold, marginal_utility, nested_set, screen
from .simulation import MetricsReport, SimulationSpec, aggregate, run_replication, run_simulation
from .tail_quantreg import TailQuantileFit, check_loss, fit_tail_quantreg, single_index_direction
from .tuning import (
    TuningTrace,
    bandwidth_cv,
    discrepancy_conditional,
    discrepancy_unconditional,
    select_k,
    select_model_size,
    tune_gp,
)

__all__ = [
    "Dataset", "empirical_quantile", "l_gamma", "rank_transform", "rank_transform_matrix",
    "EvtScreenError", "DomainError", "DataError", "ConfigError", "EstimationError",
    "EviEstimate", "pickands_unconditional", "pickands_conditional", "pickands_curve", "aux_scale",
    "GpParams", "LocalGpFit", "gp_log_density", "loo_thresholds", "fit_gp_local", "fit_gp_curve",
    "extrapolated_quantile",
    "KernelSpec", "EPANECHNIKOV", "GAUSSIAN", "KernelConditional", "kernel_weight",
    "conditional_cdf", "conditional_quantile", "loo_conditional_quantile",
    "ScreeningResult", "marginal_utility", "screen", "active_set_threshold", "nested_set",
    "SimulationSpec", "MetricsReport", "run_replication", "run_simulation", "aggregate",
    "TailQuantileFit", "check_loss", "fit_tail_quantreg", "single_index_direction",
    "TuningTrace", "bandwidth_cv", "discrepancy_unconditional", "discrepancy_conditional",
    "select_k", "select_model_size", "tune_gp",
]
