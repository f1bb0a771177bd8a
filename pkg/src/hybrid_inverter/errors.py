"""Exception hierarchy shared by every module of the package."""


class HybridInverterError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HybridInverterError, ValueError):
    """Invalid parameters, scenario files or command-line options."""


class NumericalDomainError(HybridInverterError, ArithmeticError):
    """A computation received or produced non-finite or out-of-domain values."""


class StepFailure(NumericalDomainError):
    """An integration stage produced non-finite values."""


class EventLocationError(HybridInverterError, RuntimeError):
    """Event location was requested on a step without a guard sign change."""


class GrazingTransitionError(NumericalDomainError):
    """The flow is (nearly) tangent to the switching surface."""

    def __init__(self, alpha: float, alpha_min: float):
        super().__init__(f"|alpha| = {abs(alpha):.3e} <= alpha_min = {alpha_min:.1e}")
        self.alpha = alpha
        self.alpha_min = alpha_min


class SingularGuardError(NumericalDomainError):
    """The voltage guard gradient is undefined at zero grid voltage."""


class FilterDivergenceError(NumericalDomainError):
    """The estimator produced a non-finite estimate or covariance."""
