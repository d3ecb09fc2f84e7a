"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (bad field values, missing paths)."""


class DataError(ValueError):
    """Malformed or unusable input data (bad labels, empty splits, id clashes)."""


class NumericError(ArithmeticError):
    """Non-finite values encountered where finite math is required."""
