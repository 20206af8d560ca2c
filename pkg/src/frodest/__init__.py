"""Simulation and minimum-energy estimation for discrete-time
fractional-order dynamical networks with bounded disturbances."""

__version__ = "0.1.0"

from .errors import (
    AssumptionViolationError,
    ConfigError,
    FrodestError,
    GuaranteeUnavailableError,
    ModelError,
    NumericError,
)
from .fractional import GlCoefficients, gl_coefficients, gl_difference
from .model import (
    ExpandedModel,
    FodnModel,
    NoiseBounds,
    VApprox,
    VApproxLayout,
    build_v_approximation,
    disturbance_residuals,
    expand_model,
    load_model,
    residual_r,
    save_model,
)
from .simulator import (
    Trajectory,
    gen_bounded_noise,
    read_trajectory_csv,
    simulate_exact,
    simulate_vapprox,
    synth_eeg_scenario,
    write_trajectory_csv,
)
from .estimator import (
    EstimatorConfig,
    EstimatorState,
    batch_wls_oracle,
    me_run,
    me_step,
    write_estimation_csv,
)
from .analysis import (
    AssumptionReport,
    GuaranteeBundle,
    check_assumptions,
    controllability_gramian,
    covariance_bounds,
    iss_constants,
    observability_gramian,
    state_transition,
    write_analysis_json,
)

__all__ = [
    "__version__",
    "FrodestError",
    "ConfigError",
    "ModelError",
    "AssumptionViolationError",
    "NumericError",
    "GuaranteeUnavailableError",
    "GlCoefficients",
    "gl_coefficients",
    "gl_difference",
    "NoiseBounds",
    "FodnModel",
    "ExpandedModel",
    "VApprox",
    "VApproxLayout",
    "expand_model",
    "build_v_approximation",
    "residual_r",
    "disturbance_residuals",
    "load_model",
    "save_model",
    "Trajectory",
    "simulate_exact",
    "simulate_vapprox",
    "gen_bounded_noise",
    "synth_eeg_scenario",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "EstimatorConfig",
    "EstimatorState",
    "me_step",
    "me_run",
    "batch_wls_oracle",
    "write_estimation_csv",
    "AssumptionReport",
    "GuaranteeBundle",
    "state_transition",
    "controllability_gramian",
    "observability_gramian",
    "check_assumptions",
    "covariance_bounds",
    "iss_constants",
    "write_analysis_json",
]
