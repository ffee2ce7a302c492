"""Gram-Schmidt Walk experimental design and its verification harness."""

from .estimator import (
    EstimateReport,
    OutcomeData,
    ResidualDecomposition,
    ate,
    build_report,
    formal_condition,
    ht_estimate,
    kappa_diagnostic,
    mse_bound,
    mse_bound_tightened,
    predicted_variances,
    residual_projection,
)
from .linalg import (
    CovariateSetup,
    InverseCache,
    StepDirection,
    build_setup,
    c1_bound,
    direction_inner_product,
    downdate_inverse,
    init_inverse,
    step_direction,
)
from .montecarlo import (
    SimConfig,
    SimulationDiagnostics,
    SrsworCase,
    exact_enumeration,
    ks_distance,
    make_srswor_case,
    matrix_concentration_check,
    run_replications,
    srswor_bruteforce,
    srswor_moments,
    variance_ratio_experiment,
)
from .sampler import DesignState, feasible_interval, gsw_step, run_gsw, sample_step, select_pivot
from .skeletal import (
    CoupledTrajectory,
    check_g1,
    check_g2,
    coupled_step,
    epsilon_schedule,
    eta_draw,
    run_coupled,
    run_skeletal,
)

__version__ = "0.1.0"

__all__ = [
    "EstimateReport",
    "OutcomeData",
    "ResidualDecomposition",
    "ate",
    "build_report",
    "formal_condition",
    "ht_estimate",
    "kappa_diagnostic",
    "mse_bound",
    "mse_bound_tightened",
    "predicted_variances",
    "residual_projection",
    "CovariateSetup",
    "InverseCache",
    "StepDirection",
    "build_setup",
    "c1_bound",
    "direction_inner_product",
    "downdate_inverse",
    "init_inverse",
    "step_direction",
    "SimConfig",
    "SimulationDiagnostics",
    "SrsworCase",
    "exact_enumeration",
    "ks_distance",
    "make_srswor_case",
    "matrix_concentration_check",
    "run_replications",
    "srswor_bruteforce",
    "srswor_moments",
    "variance_ratio_experiment",
    "DesignState",
    "feasible_interval",
    "gsw_step",
    "run_gsw",
    "sample_step",
    "select_pivot",
    "CoupledTrajectory",
    "check_g1",
    "check_g2",
    "coupled_step",
    "epsilon_schedule",
    "eta_draw",
    "run_coupled",
    "run_skeletal",
    "__version__",
]
