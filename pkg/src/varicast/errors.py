"""Exception hierarchy shared by all varicast modules.

The CLI maps these onto exit codes: usage/contract problems -> 1,
data problems -> 2, numeric problems -> 3.
"""


class VaricastError(Exception):
    """Base class for all library errors."""


class ShapeError(VaricastError):
    """Operand shapes do not conform for the requested operation."""


class DomainError(VaricastError):
    """Input outside the mathematical domain of an operation (log of a negative, ...)."""


class NumericError(VaricastError):
    """A computation produced NaN or Inf, or gradients blew up."""


class ContractError(VaricastError):
    """A documented precondition of an operation was violated by the caller."""


class DataError(VaricastError):
    """Base class for problems with input data files."""


class SchemaError(DataError):
    """A required column is missing or a cell cannot be parsed."""


class OrderingError(DataError):
    """Timestamps are not strictly increasing."""


class SizeError(DataError):
    """The series is too short for the requested windowing."""


class ConfigError(VaricastError):
    """A run configuration is malformed or inconsistent."""
