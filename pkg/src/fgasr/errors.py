"""Exception types shared across the package."""


class FgaError(Exception):
    """Base class for all package errors."""


class ShapeError(FgaError, ValueError):
    """Raised when tensor extents do not satisfy an operation's contract."""


class ConfigError(FgaError, ValueError):
    """Raised for structurally invalid configurations."""


class NumericError(FgaError, ArithmeticError):
    """Raised when a computation produces non-finite values."""
