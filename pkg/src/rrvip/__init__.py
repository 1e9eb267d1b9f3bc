"""Finite-sum VI solvers with reshuffling and step-size extrapolation."""

from .errors import (
    DegenerateProblemError,
    DivergenceError,
    EnumerationGuardError,
    InvariantViolation,
    NonContractiveError,
    NotConvergedError,
    ParameterError,
    UnsupportedProblemError,
)
from .problems import (
    FiniteSumProblem,
    ProblemConstants,
    QuadraticGameSpec,
    exact_solution,
    gamma_max,
    gamma_max_bias_suite,
    generate_generic_affine,
    generate_quadratic_game,
    make_wgan_problem,
    problem_constants,
    problem_from_json,
    problem_to_json,
    spectral_norm,
    wgan_problem_from_data,
)
from .samplers import (
    CoupledPlans,
    SamplingPlan,
    make_coupled,
    next_permutation,
    next_with_replacement,
)
from .solver import (
    RunConfig,
    Trajectory,
    epoch_pass,
    extrapolate_average,
    extrapolate_last,
    extrapolated_series,
    perturb,
    run_lockstep_chains,
    run_variant,
)
from .analysis import (
    BiasCurve,
    CltSample,
    MomentReport,
    bias_curve,
    clt_harness,
    drift_energies,
    epoch_affine_map,
    ergodic_decay,
    fit_loglog_slope,
    fourth_moment_bound,
    fourth_moment_bruteforce,
    fourth_moment_exact,
    fourth_plateau,
    full_moment_report,
    full_pass_jacobian,
    jacobian_bound_check,
    moment_plateau,
    mse_plateau,
    one_pass_operator_jacobian,
    stationary_mean_exact,
)

__version__ = "0.1.0"
