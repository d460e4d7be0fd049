"""Exception types raised across the package."""


class TsvdNetError(Exception):
    """Base class for all errors raised by tsvdnet."""


class DimMismatch(TsvdNetError, ValueError):
    pass


class NonFiniteInput(TsvdNetError, ValueError):
    pass


class ImaginaryResidueTooLarge(TsvdNetError, ArithmeticError):
    pass


class SvdFailure(TsvdNetError, ArithmeticError):
    def __init__(self, slice_index, cause=None):
        super().__init__(f"SVD did not converge on Fourier slice {slice_index}: {cause}")
        self.slice_index = slice_index


class NegativeThreshold(TsvdNetError, ValueError):
    pass


class NonPositiveSigma(TsvdNetError, ValueError):
    pass


class NonFiniteGradient(TsvdNetError, ArithmeticError):
    pass


class InvalidDistribution(TsvdNetError, ValueError):
    pass


class InsufficientPrototypes(TsvdNetError, ValueError):
    pass


class EmptyDomainBatch(TsvdNetError, ValueError):
    pass


class EmptyEvalSet(TsvdNetError, ValueError):
    pass


class SpecInvalid(TsvdNetError, ValueError):
    pass


class ConfigError(TsvdNetError, ValueError):
    pass


class MalformedFile(TsvdNetError, ValueError):
    pass


class TrainingDiverged(TsvdNetError, ArithmeticError):
    """Raised when a loss or gradient goes non-finite; carries the metrics so far."""

    def __init__(self, message, metrics=None):
        super().__init__(message)
        self.metrics = metrics if metrics is not None else []
