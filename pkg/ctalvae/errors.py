"""
Exception hierarchy for the CTAL-VAE toolkit

Library code raises these; only the command-line entry point turns them
into exit codes.
"""

from typing import Optional


class CtalVaeError(Exception):
    """Base class for all toolkit errors"""


class DataValidationError(CtalVaeError, ValueError):
    """Input data or arguments violate a documented contract"""


class FlowParseError(DataValidationError):
    """A flow CSV could not be parsed"""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class SchemaMismatchError(DataValidationError):
    """Feature dimension or column names disagree with the expected schema"""

    def __init__(self, message: str, expected: Optional[int] = None, actual: Optional[int] = None):
        self.expected = expected
        self.actual = actual
        if expected is not None and actual is not None:
            message = f"{message} (expected dimension {expected}, got {actual})"
        super().__init__(message)


class UnknownDomainError(DataValidationError):
    """A domain name is not present in the model bundle"""


class ConfigError(DataValidationError):
    """Invalid or unknown configuration values"""


class CheckpointFormatError(DataValidationError):
    """Checkpoint file is truncated, has the wrong magic or an unknown version"""


class GradientCheckError(CtalVaeError):
    """Finite-difference evaluation produced a non-finite function value"""


class TrainingDivergedError(CtalVaeError, RuntimeError):
    """The training loss became non-finite"""

    def __init__(self, phase: str, epoch: int, batch: int, value: float):
        self.phase = phase
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(
            f"non-finite loss {value!r} during {phase} at epoch {epoch}, batch {batch}"
        )
