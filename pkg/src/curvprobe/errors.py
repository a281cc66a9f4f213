"""Exception hierarchy shared across the toolkit."""


class CurvprobeError(Exception):
    """Base class for toolkit failures."""


class ShapeError(CurvprobeError, ValueError):
    """Operands have incompatible shapes."""


class GraphError(CurvprobeError, RuntimeError):
    """Backward pass requested on an invalid graph (non-scalar or detached loss)."""


class DatasetFormatError(CurvprobeError, ValueError):
    """A dataset file does not match its declared format."""


class BadMagicError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class LabelRangeError(DatasetFormatError):
    pass


class CheckpointError(CurvprobeError, ValueError):
    """Corrupt, mismatched or unsupported checkpoint file."""


class CheckpointVersionError(CheckpointError):
    pass


class DegenerateGradientError(CurvprobeError, ArithmeticError):
    """Input gradient is all zeros or contains NaN."""


class MisclassifiedInputError(CurvprobeError, ValueError):
    """Analysis requires a correctly classified input."""


class OrthogonalizationError(CurvprobeError, ArithmeticError):
    """Could not draw a random direction orthogonal to the reference direction."""


class TrainingDivergedError(CurvprobeError, FloatingPointError):
    """Training loss became NaN or infinite."""

    def __init__(self, message: str, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


class IncompleteLogError(CurvprobeError, ValueError):
    """Training dynamics log has gaps."""
