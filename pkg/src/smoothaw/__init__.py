"""Adapted and smooth adapted Wasserstein distances between path measures.

Exact discrete and adapted optimal transport, Gaussian smoothing with kernel
disintegration, Monte Carlo upper bounds for the smooth adapted distance, a
martingale projection statistic, and reproducible rate experiments.
"""

from .adapted import (
    BicausalPlan,
    CausalityReport,
    HistoryTree,
    aw_bruteforce_lp,
    aw_exact,
    build_history_tree,
    verify_bicausal,
)
from .constants import (
    LipschitzConstants,
    calibrate_poincare,
    check_parameters,
    default_beta,
    density_ratio,
    exp_moment_smoothed,
    gaussian_product_integral,
    kernel_constants,
    lower_bound,
    q_star,
    theorem_q,
)
from .errors import (
    InvalidInputError,
    MomentOverflowError,
    NumericalPreconditionError,
    ParameterError,
    ResourceCapError,
)
from .experiments import (
    ExperimentConfig,
    RateReport,
    RateRow,
    emit_report,
    fit_loglog_slope,
    run_nonconvergence_experiment,
    run_rate_experiment,
    run_sharpness_experiment,
)
from .measure import DiscreteMeasure, Sampler, information_pair, load_measure, sample_empirical
from .ot import CostSpec, TransportPlan, wasserstein_1d_quantile, wasserstein_discrete
from .smooth_aw import MCConfig, UpperBoundEstimate, kernel_lipschitz_scan, smooth_aw_upper
from .smoothing import KernelMixture, SmoothedMeasure, disintegrate, w_p_mixture_1d
from .smpd import XiSmoothedMeasure, smpd_statistic, smpd_test

__version__ = "0.1.0"

__all__ = [
    "BicausalPlan",
    "CausalityReport",
    "CostSpec",
    "DiscreteMeasure",
    "ExperimentConfig",
    "HistoryTree",
    "InvalidInputError",
    "KernelMixture",
    "LipschitzConstants",
    "MCConfig",
    "MomentOverflowError",
    "NumericalPreconditionError",
    "ParameterError",
    "RateReport",
    "RateRow",
    "ResourceCapError",
    "Sampler",
    "SmoothedMeasure",
    "TransportPlan",
    "UpperBoundEstimate",
    "XiSmoothedMeasure",
    "aw_bruteforce_lp",
    "aw_exact",
    "build_history_tree",
    "calibrate_poincare",
    "check_parameters",
    "default_beta",
    "density_ratio",
    "disintegrate",
    "emit_report",
    "exp_moment_smoothed",
    "information_pair",
    "fit_loglog_slope",
    "gaussian_product_integral",
    "kernel_constants",
    "kernel_lipschitz_scan",
    "load_measure",
    "lower_bound",
    "q_star",
    "run_nonconvergence_experiment",
    "run_rate_experiment",
    "run_sharpness_experiment",
    "sample_empirical",
    "smooth_aw_upper",
    "smpd_statistic",
    "smpd_test",
    "theorem_q",
    "verify_bicausal",
    "w_p_mixture_1d",
    "wasserstein_1d_quantile",
    "wasserstein_discrete",
]
