"""
Error hierarchy for the Traffic Confidence Classifier.

Every library failure derives from PipelineError so the CLI can map
configuration problems and data problems to distinct exit codes.
"""

from typing import Optional


class PipelineError(Exception):
    """Base class for all pipeline failures."""
    pass


class ConfigurationError(PipelineError):
    """Raised when the experiment configuration or a CLI argument is invalid."""
    pass


class DataError(PipelineError):
    """Raised when an input artifact is malformed."""
    pass


class CaptureFormatError(DataError):
    """Raised when a capture file is not a readable pcap."""
    pass


class EmptyClassError(DataError):
    """Raised when a class required by an operation has no samples."""

    def __init__(self, label: str, message: Optional[str] = None):
        self.label = label
        super().__init__(message or f"Class '{label}' has no samples.")


class EmbeddingFormatError(DataError):
    """Raised when an embedding row has the wrong dimension or non-finite values."""

    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"Row {row}: {message}")


class NumericalError(DataError):
    """Raised for zero-norm vectors and covariances that are not positive definite."""
    pass


class DegenerateBatchError(PipelineError):
    """Raised when a contrastive batch contains no anchor with a positive."""
    pass


class TrainingDivergedError(PipelineError):
    """Raised when the training loss becomes NaN or infinite."""
    pass


class ModelNotCalibratedError(PipelineError):
    """Raised when a GMM is used for classification before labeling/calibration."""
    pass


class StageError(PipelineError):
    """Raised by the experiment runner when a stage fails."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"Stage '{stage}' failed: {message}")
