"""Exception taxonomy shared across the library.

The CLI maps ConfigError to exit code 1 and NumericalError to exit code 2.
"""


class DifflabError(Exception):
    """Base class for all library errors."""


class DimensionError(DifflabError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ContractError(DifflabError, RuntimeError):
    """A documented precondition was violated (e.g. timestep out of range)."""


class ConfigError(DifflabError, ValueError):
    """Invalid configuration value (bad beta range, unknown dataset, ...)."""


class NumericalError(DifflabError, RuntimeError):
    """Non-finite values encountered where finiteness is required."""
