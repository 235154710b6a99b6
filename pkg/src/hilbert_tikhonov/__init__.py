"""Hilbert-scale Tikhonov regularization for nonlinear statistical inverse learning.

Everything lives on a spectral testbed: a trigonometric basis on [0, 1],
a diagonal kernel with eigenvalues ``mu_j`` and a diagonal scale operator
``L = diag(j**a)``, so that every operator in the analysis can be computed
exactly at truncation ``n``.
"""
from .diagnostics import (
    ConcentrationReport,
    StandardizedQuantities,
    compute_standardized,
    concentration_study,
    perturbation_bounds,
    sampling_bounds,
)
from .estimator import (
    IllConditionedError,
    Sample,
    SolveResult,
    lambda_apriori,
    objective,
    parameter_condition,
    solve_linearized,
    theta_function,
    tikhonov_solve,
)
from .harness import (
    ExperimentConfig,
    RateReport,
    emit_report,
    fit_slope,
    make_truth,
    read_rates_csv,
    run_rate_study,
    run_trial,
    saturation_contrast,
)
from .noise import NoiseModel, bernstein_sweep, certify_bernstein, sample_noise
from .operators import ForwardOp, estimate_constants, link_check, operator_norm
from .rkhs import (
    DesignPoints,
    KernelView,
    classify_decay,
    covariance_empirical,
    covariance_population,
    effective_dimension,
    gram_matrix,
    kappa_sq,
    kernel_eval,
    sampling_adjoint,
    sampling_apply,
)
from .testbed import TestbedSpec, apply_L_power, basis_eval, hs_norm, interpolation_gap

__version__ = "0.1.0"
