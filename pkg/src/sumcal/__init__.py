"""Calibration of expensive forward models against reported summary statistics.

Pipeline: polynomial-chaos surrogates of the forward model, Sobol-index
dimension reduction, synthetic-data likelihoods with a consistency-tuned
variance scale, adaptive MCMC posterior sampling, and pushforward validation.
"""

from .core import (
    CalibrationConfig,
    DataSummarySet,
    FunctionPredictor,
    GaussianPrior,
    InconsistentDataError,
    NumericalError,
    ParameterEntry,
    ParameterSpace,
    SumcalError,
    SyntheticDataCollection,
    ValidationError,
    default_prior,
    derive_seed,
    load_config,
    load_data_summary,
    load_experiment_manifest,
    load_parameter_space,
    write_config,
    write_parameter_space,
)
from .gsa import mc_sobol_total, rank_and_truncate, sensitivity_table, total_sobol
from .likelihood import (
    LogDensity,
    combined_loglik,
    default_weights,
    gaussian_loglik,
    log_posterior,
    log_prior,
    pooled_loglik,
)
from .mcmc import Chain, map_estimate, postprocess, run_chain, warm_start
from .pce import (
    PceSurrogate,
    SurrogateFamily,
    fit_family,
    fit_surrogate,
    family_predictor,
    interpolate_coefficients,
    legendre_normalized,
    relative_l2_error,
    scale_to_reference,
    total_order_index_set,
)
from .pipeline import (
    ConsistencyReport,
    JointResult,
    PushforwardSummary,
    SamplerSettings,
    calibrate_beta,
    consistency_distance,
    draw_synthetic,
    experiment_specific_copies,
    joint_calibrate,
    pushforward,
    pushforward_stat,
)
from .testmodels import ArrheniusModel, arrhenius_eval, make_synthetic_problem

__version__ = "0.1.0"
