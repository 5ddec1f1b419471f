"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested operation."""


class NumericError(ArithmeticError):
    """A computation produced or received non-finite values."""


class ParseError(ValueError):
    """An input file is malformed; message includes the offending line."""


class ValidationError(ValueError):
    """Input data violates a documented contract."""


class ConfigError(ValueError):
    """A configuration value is out of range or inconsistent."""


class SamplingError(RuntimeError):
    """An episode could not be drawn; message names the deficient class."""


class DomainError(ValueError):
    """A mathematical function was evaluated outside its domain."""


class UndefinedMetricError(ValueError):
    """The metric is undefined for the given inputs (e.g. single-class AUC)."""
