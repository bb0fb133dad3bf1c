"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class QsmError(Exception):
    """Base class for all package errors."""


class ConfigError(QsmError):
    """Invalid configuration or arguments."""


class DataError(QsmError):
    """Malformed, inconsistent or degenerate input data."""


class NumericalError(QsmError):
    """Numerical consistency violated (divergence, non-real spectra, ...)."""
