"""
Exception hierarchy shared by the library and the command-line interface.

Every error carries the process exit code the CLI reports for it:
1 for usage/config problems, 2 for data problems, 3 for numeric failures.
"""

from typing import Sequence


class TwinFormerError(Exception):
    """Base class for all errors raised by twinformer."""

    exit_code = 1


class ConfigError(TwinFormerError):
    """Invalid configuration, bad hyperparameter or command usage."""

    exit_code = 1


class ShapeError(ConfigError):
    """Operand dimensions do not agree."""

    def __init__(self, op: str, *shapes: Sequence[int], detail: str = ""):
        shown = " and ".join(str(tuple(s)) for s in shapes)
        message = f"{op}: incompatible shapes {shown}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)
        self.op = op
        self.shapes = [tuple(s) for s in shapes]


class CheckpointError(ConfigError):
    """Checkpoint file is unreadable or does not match the run config."""


class DataError(TwinFormerError):
    """Input data is missing, malformed or too short."""

    exit_code = 2


class NumericError(TwinFormerError):
    """A computation produced a non-finite value or cannot be evaluated."""

    exit_code = 3


class DegenerateRowError(NumericError):
    """A softmax row has no finite entry, so it has no valid distribution."""


class TapeError(NumericError):
    """Reverse-mode differentiation was requested in an invalid state."""


class GradientAuditError(NumericError):
    """A gradient is missing or disagrees with finite differences."""
