"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes, so every user-facing failure
should be raised as one of the three classes below.
"""


class ConfigError(Exception):
    """Invalid configuration: bad flag values, unknown modes, missing paths."""


class DataError(Exception):
    """Data that violates a format or consistency contract."""


class NumericalError(Exception):
    """Non-finite values where finite ones are required (loss, gradients)."""
