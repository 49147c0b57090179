"""Exception hierarchy shared by every omitlab module."""


class OmitError(Exception):
    """Base class for all toolkit errors."""


class DomainError(OmitError, ValueError):
    """An input lies outside the domain of the operation.

    ``field`` names the offending parameter when there is one.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class NumericalError(OmitError, RuntimeError):
    """A numerical procedure failed to converge or lost precision."""


class SingularityError(NumericalError):
    """A response function hit a pole."""


class SeedingError(DomainError):
    """No usable spectral feature to seed a fit from."""
