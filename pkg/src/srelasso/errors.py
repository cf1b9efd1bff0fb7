"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration errors exit 2,
data/ingestion errors exit 3, numerical failures exit 4.
"""


class SreLassoError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SreLassoError):
    """Invalid configuration: bad shapes, indices, options, or schema."""


class DataError(SreLassoError):
    """Invalid data: non-numeric cells, ragged rows, NaN inputs."""


class NumericalError(SreLassoError):
    """Numerical failure: weak instruments, unbracketable roots, etc."""
