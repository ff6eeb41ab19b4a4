"""Exception types shared across the package."""


class WarpAlignError(Exception):
    """Base class for all package errors."""


class DomainError(WarpAlignError, ValueError):
    """An input value lies outside the domain an operation accepts."""


class RangeError(WarpAlignError, IndexError):
    """A window or slice does not fit inside its source."""


class ShapeError(WarpAlignError, ValueError):
    """Array shapes are inconsistent."""


class ConfigError(WarpAlignError, ValueError):
    """A configuration value is invalid."""


class EmptySpectrogramError(WarpAlignError, ValueError):
    """The waveform is too short to produce a single frame."""


class VocabularyError(WarpAlignError, KeyError):
    """A symbol is not part of the vocabulary."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown symbol"


class EvaluationError(WarpAlignError, ArithmeticError):
    """A forward evaluation produced a non-finite value."""


class DivergenceError(EvaluationError):
    """Training produced a non-finite loss."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")
