"""Error taxonomy shared across the package.

Three kinds of failure are distinguished so the CLI can map them to exit
codes: bad inputs (UsageError -> 1), numerical trouble such as non-finite
intermediates (NumericalError -> 2), and refusing to allocate absurd amounts
of work or memory (ResourceError -> 2).
"""


class UsageError(ValueError):
    """The caller violated a documented precondition."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite or otherwise unusable values."""


class ResourceError(RuntimeError):
    """The requested computation exceeds a documented size cap."""
