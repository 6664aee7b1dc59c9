"""Marcus-Lushnikov simulation and d_lambda convergence diagnostics for Smoluchowski coagulation."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CoalrateError,
    ConfigError,
    InvariantViolation,
    NumericalError,
    QuadratureError,
    ReferenceInvalidError,
    StepSizeError,
    ValidationError,
)
from .measures import (  # noqa: E402
    DiscreteMeasure,
    TruncatedMeasure,
    d_lambda_discrete,
    d_lambda_vs_reference,
    moment,
    theta_integral_check,
)
from .kernels import ConditionClass, Kernel, builtin_kernel, verify_conditions  # noqa: E402
from .mlprocess import ParticleSystem, init, run_until, step  # noqa: E402
from .initcond import build_atomless_neg, build_atomless_pos, build_discrete, build_initial  # noqa: E402
from .reference import GolovinSolution, golovin_analytic, golovin_tail, solve_discrete_ode  # noqa: E402

__all__ = [
    "CoalrateError",
    "ConfigError",
    "InvariantViolation",
    "NumericalError",
    "QuadratureError",
    "ReferenceInvalidError",
    "StepSizeError",
    "ValidationError",
    "DiscreteMeasure",
    "TruncatedMeasure",
    "d_lambda_discrete",
    "d_lambda_vs_reference",
    "moment",
    "theta_integral_check",
    "ConditionClass",
    "Kernel",
    "builtin_kernel",
    "verify_conditions",
    "ParticleSystem",
    "init",
    "run_until",
    "step",
    "build_atomless_neg",
    "build_atomless_pos",
    "build_discrete",
    "build_initial",
    "GolovinSolution",
    "golovin_analytic",
    "golovin_tail",
    "solve_discrete_ode",
]
