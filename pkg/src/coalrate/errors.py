"""Exception hierarchy shared by all modules.

Validation errors (bad input, malformed config) and numerical errors
(quadrature disagreement, invariant violations, unstable integration) are
kept apart so the command line can map them to distinct exit codes.
"""


class CoalrateError(Exception):
    """Base class for all package errors."""


class ValidationError(CoalrateError, ValueError):
    """An input violates a documented precondition."""


class ConfigError(ValidationError):
    """A configuration file is malformed; ``key`` names the offending entry."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"config key {key!r}: {message}")


class NumericalError(CoalrateError, ArithmeticError):
    """A numerical procedure failed or produced an untrustworthy result."""


class QuadratureError(NumericalError):
    """Successive quadrature refinements disagree beyond tolerance."""


class InvariantViolation(NumericalError):
    """A trajectory or solution invariant was broken (indicates a bug)."""


class StepSizeError(NumericalError):
    """The ODE integrator went unstable (negative concentrations)."""


class ReferenceInvalidError(NumericalError):
    """A reference solution is not trustworthy (e.g. truncation leak)."""
