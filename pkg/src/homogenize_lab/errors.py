"""Exception hierarchy shared by every module of the lab."""


class HomogenizationError(Exception):
    """Base class for numerical failures raised by the library."""


class ConfigError(HomogenizationError, ValueError):
    """Invalid user-supplied configuration; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.message = message
        self.field = field


class DomainError(HomogenizationError, ValueError):
    """A point lies outside the region where an operation is defined."""


class ModelContractError(HomogenizationError):
    """The model violates one of its declared contracts (e.g. no zero control)."""


class CoercivityError(HomogenizationError):
    """The running cost does not grow fast enough to confine the controls."""


class InfeasibleError(HomogenizationError):
    """No admissible path reaches the required endpoint."""


class ExtrapolationError(HomogenizationError, ValueError):
    """A table was queried outside the convex hull of its lattice."""


class RadiusTooSmallError(HomogenizationError):
    """A supremum over controls was attained on the boundary of the control grid."""


class CFLError(HomogenizationError):
    """Explicit scheme step violates its stability condition."""

    def __init__(self, message, suggested_dt):
        super().__init__(f"{message}; suggested dt <= {suggested_dt:.6g}")
        self.suggested_dt = suggested_dt


class ThresholdError(HomogenizationError):
    """Control bound below what the bounded-control construction requires."""

    def __init__(self, message, required_R):
        super().__init__(f"{message}; required R >= {required_R:.6g}")
        self.required_R = required_R
