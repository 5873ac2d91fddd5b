"""Exception types shared across the package."""


class TaskVitError(Exception):
    """Base class for all package errors."""


class DimensionError(TaskVitError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigError(TaskVitError):
    """A configuration value is missing, unknown, or inconsistent."""


class DataError(TaskVitError):
    """Input data violates a documented precondition (bad file, bad label, bad box)."""


class ContractError(TaskVitError):
    """An API contract was violated by the caller (e.g. non-scalar loss)."""
