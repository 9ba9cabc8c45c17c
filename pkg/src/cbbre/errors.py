"""Exception types shared across the package."""


class CBBREError(Exception):
    """Base class for all package errors."""


class ParameterError(CBBREError, ValueError):
    """Invalid or inconsistent input parameters."""


class UnsupportedMechanismError(CBBREError):
    """Operation undefined for this branching mechanism (e.g. infinite mean)."""


class DivergentFunctionalError(CBBREError):
    """The requested exponential functional is almost surely infinite."""


class QuadratureInstabilityError(CBBREError):
    """Quadrature refused: the oscillatory kernel is numerically unstable here."""


class MethodError(CBBREError, ValueError):
    """The requested evaluation method is not valid for these parameters."""


class RegimeError(CBBREError):
    """Operation requested outside its asymptotic regime of validity."""


class SolverError(CBBREError):
    """Backward ODE integration failed (blow-up or negative excursion)."""


class ConfigError(CBBREError, ValueError):
    """Configuration document failed validation."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(message if field is None else f"{field}: {message}")
