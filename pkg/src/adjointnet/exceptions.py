"""Exception hierarchy shared across the package."""


class AdjointNetError(Exception):
    """Base class for all errors raised by adjointnet."""


class DimensionError(AdjointNetError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(AdjointNetError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class ContractError(AdjointNetError, RuntimeError):
    """A precondition of a stateful operation was violated."""


class ValidationError(AdjointNetError, ValueError):
    """Input data violates the declared schema."""


class DataFormatError(ValidationError):
    """A data file could not be parsed or is structurally malformed."""


class TrainingError(AdjointNetError, RuntimeError):
    """Training diverged.

    Parameters
    ----------
    message : str
        Human readable diagnostic.
    last_finite_epoch : int or None
        Index of the last epoch whose loss was finite, if any.
    """

    def __init__(self, message, last_finite_epoch=None):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch
