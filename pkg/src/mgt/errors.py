"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid shapes, sizes, or configuration values."""


class NumericError(ArithmeticError):
    """A primitive produced a non-finite value."""


class FormatError(ValueError):
    """A data or checkpoint file does not match its on-disk format."""
