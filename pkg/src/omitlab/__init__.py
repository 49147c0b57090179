"""Optomechanically induced transparency and amplification in a membrane-in-the-middle cavity."""

__version__ = "0.1.0"

from .errors import DomainError, NumericalError, OmitError, SeedingError, SingularityError
from .model import OptomechSystem

__all__ = [
    "__version__",
    "DomainError",
    "NumericalError",
    "OmitError",
    "OptomechSystem",
    "SeedingError",
    "SingularityError",
]
