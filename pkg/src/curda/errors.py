"""Exception types shared across the package."""


class CurdaError(Exception):
    """Base class for all package errors."""


class ConfigError(CurdaError):
    """Invalid configuration value or combination."""


class IngestError(CurdaError):
    """A dataset file is missing, empty, or malformed."""


class StructuralError(CurdaError):
    """Shapes or counts that should agree do not."""


class ContractError(CurdaError):
    """An operation was called with inputs violating its preconditions."""


class NumericalError(CurdaError):
    """Non-finite values appeared where finite ones are required."""


class DivergenceError(CurdaError):
    """Training produced a non-finite loss; message references the last good checkpoint."""
