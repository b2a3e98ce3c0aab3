"""Exception types raised across the package."""


class SdotError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(SdotError, ValueError):
    """Input data violates a documented precondition."""


class NotAdmissibleError(SdotError):
    """A height vector leaves some power cell empty where nonempty cells are required."""


class OutOfDomainError(SdotError, ValueError):
    """A query point lies outside the source domain."""


class UndefinedGradientError(SdotError):
    """The Kantorovich potential is not differentiable at the query point."""


class InvalidStateError(SdotError):
    """An object is used before it reached the state an operation needs."""
