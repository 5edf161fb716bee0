"""Exception hierarchy shared by every module in the package."""


class DllpError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DllpError, ValueError):
    """Operands have incompatible or unexpected dimensions."""


class ParameterError(DllpError, ValueError):
    """A numeric parameter is outside its legal range."""


class DomainError(DllpError, ValueError):
    """An input value lies outside the mathematical domain of the operation."""


class ConfigError(DllpError, ValueError):
    """A model or run configuration is structurally invalid."""


class DataError(DllpError, ValueError):
    """An input file failed parsing or validation."""


class NumericError(DllpError, ArithmeticError):
    """A computation produced a non-finite value."""


class UsageError(DllpError, RuntimeError):
    """An operation was invoked in a state it does not support."""
