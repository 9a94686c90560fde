"""Exception hierarchy shared by every module of the package."""


class MIDGNError(Exception):
    """Base class for all errors raised by midgn."""


class ConfigError(MIDGNError, ValueError):
    """Invalid hyperparameters or experiment configuration."""


class DataFormatError(MIDGNError, ValueError):
    """A malformed line in an interaction file."""

    def __init__(self, path, lineno, line, reason="expected two non-negative integers"):
        self.path = str(path)
        self.lineno = lineno
        self.line = line
        super().__init__(f"{self.path}:{lineno}: {reason}: {line!r}")


class BoundsError(MIDGNError, IndexError):
    """An id outside the declared dimensions."""


class StructuralError(MIDGNError, ValueError):
    """Matrices whose dimensions do not agree with each other."""


class NonFiniteGradientError(MIDGNError, FloatingPointError):
    """A gradient with NaN or inf entries reached the optimizer."""


class TrainingDivergedError(MIDGNError, FloatingPointError):
    """Loss became NaN during training."""
