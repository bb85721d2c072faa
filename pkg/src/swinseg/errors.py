"""Error taxonomy shared across the package.

CLI exit codes: ConfigError -> 1, DataError -> 2, NumericError -> 3.
"""

from .tensor import NumericError  # noqa: F401


class ConfigError(ValueError):
    """Invalid configuration (bad window geometry, malformed config file, ...)."""


class DataError(ValueError):
    """Invalid data (label out of range, unpaired files, size mismatch, ...)."""
