"""Capacity bounds and norm-constrained training for small conv nets."""

from .errors import NumericalError, ResourceError, UsageError

__version__ = "0.1.0"

__all__ = ["UsageError", "ResourceError", "NumericalError", "__version__"]
