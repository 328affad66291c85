"""Shared exception types."""


class ContractViolation(ValueError):
    """An operation was called with inputs that break its preconditions."""


class NumericError(ArithmeticError):
    """A non-finite value (NaN/Inf) showed up where the math guarantees finiteness."""


class ConfigError(ValueError):
    """An experiment config file failed validation."""
