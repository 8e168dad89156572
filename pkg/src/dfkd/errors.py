"""Exception types raised across the toolkit."""


class DFKDError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(DFKDError, ValueError):
    pass


class DomainError(DFKDError, ValueError):
    """An operand lies outside the domain of an operation (log of 0, divide by 0, ...)."""


class ContractError(DFKDError, ValueError):
    """A caller violated a documented precondition."""


class ConfigError(DFKDError, ValueError):
    pass


class NonFiniteError(DFKDError, FloatingPointError):
    """An operation produced NaN or Inf."""


class CorruptCheckpointError(DFKDError):
    pass


class FormatError(DFKDError):
    """A binary data file does not follow its documented layout."""


class DataError(DFKDError, ValueError):
    pass


class NondeterministicFunctionError(DFKDError):
    """The function under a gradient check returned different values for identical inputs."""


class DivergenceError(DFKDError, FloatingPointError):
    """An optimization loop produced a non-finite loss."""
