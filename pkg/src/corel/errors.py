"""Exception types shared across modules."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its preconditions."""


class ConfigurationError(ValueError):
    """A run or loss configuration is invalid."""
