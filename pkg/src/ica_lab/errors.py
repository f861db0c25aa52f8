"""Exception hierarchy shared by all ica_lab modules."""


class IcaLabError(Exception):
    """Base class for every error raised by ica_lab."""


class ArgumentError(IcaLabError, ValueError):
    """Invalid argument (bad index, empty point list, non-orthogonal matrix, ...)."""


class DomainError(IcaLabError):
    """A point lies outside the domain of a map or field."""


class SingularityError(DomainError):
    """Evaluation at (or too close to) a singular point or singular Jacobian."""


class RangeError(IcaLabError, ValueError):
    """Target value is not bracketed by the supplied interval."""


class PrecisionError(IcaLabError):
    """A numerical routine could not reach the requested tolerance."""


class IntegrationError(IcaLabError):
    """ODE integration produced a non-finite state."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class FlowError(IntegrationError):
    """Blow-up while evaluating the flow of a vector field."""


class CapabilityError(IcaLabError):
    """The operation needs a capability (e.g. an inverse) the object lacks."""


class PreconditionError(IcaLabError):
    """Input violates a documented precondition (e.g. base map is not OCT)."""


class EstimationError(IcaLabError):
    """Monte Carlo estimate invalid: too many excluded samples."""


class NumericError(IcaLabError):
    """Non-finite value inside the flow model or its loss."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class TrainingError(IcaLabError):
    """Training did not reach the required quality; carries the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
