"""Exception types shared across the package."""


class AscPetError(Exception):
    """Base class for all package errors."""


class DomainError(AscPetError, ValueError):
    """A value is outside the physically meaningful domain of an operation."""


class ShapeError(AscPetError, ValueError):
    """Array shapes are inconsistent with the operation's contract."""


class ConfigError(AscPetError, ValueError):
    """A configuration object violates its invariants."""


class FormatError(AscPetError, ValueError):
    """A serialized file is malformed (bad magic, truncation, shape mismatch)."""


class TrainingError(AscPetError, RuntimeError):
    """Training aborted (non-finite loss or gradients)."""


class InsufficientDataError(AscPetError, ValueError):
    """Too few data points to compute the requested statistic."""
