"""Exception hierarchy shared across the package."""


class ConvInvError(Exception):
    """Base class for all package errors."""


class DimensionError(ConvInvError, ValueError):
    """Array shapes do not agree with what an operation requires."""


class ContainerError(ConvInvError, IOError):
    """A stack container file could not be decoded."""


class BadMagicError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class NonFiniteError(ContainerError):
    pass


class DegenerateSignalError(ConvInvError, ValueError):
    """Noise level requested for an all-zero clean measurement."""


class SingularBlockError(ConvInvError, ArithmeticError):
    """A pivot of the block-diagonal inversion vanished."""


class ContractError(ConvInvError, ValueError):
    """A precomputed operator was built for different parameters."""


class DegenerateProjectionError(ConvInvError, ArithmeticError):
    """Projection onto the unit sphere of a (numerically) zero vector."""


class DivergenceError(ConvInvError, ArithmeticError):
    """ADMM iterates blew up."""


class UndefinedMetricError(ConvInvError, ValueError):
    """A metric has no valid samples to average over."""
