"""Exception types raised across the package."""


class StreamGPError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(StreamGPError, ValueError):
    pass


class FactorizationFailed(StreamGPError):
    """Cholesky failed even after the maximum jitter escalation."""


class NonPositiveSchurComplement(StreamGPError):
    """Appending a point would make the factor singular (numerical duplicate)."""


class CapExceeded(StreamGPError):
    pass


class InsufficientData(StreamGPError):
    pass


class DegenerateSummary(StreamGPError):
    """The carried-over posterior cannot be written as a Gaussian pseudo-likelihood."""


class AllCandidatesDegenerate(StreamGPError):
    pass


class NonFiniteObjective(StreamGPError):
    pass


class ParseError(StreamGPError, ValueError):
    def __init__(self, row, column, message=""):
        self.row = row
        self.column = column
        super().__init__(f"row {row}, column {column}: {message}".rstrip(": "))


class EmptyFile(StreamGPError, ValueError):
    pass


class InvalidPlan(StreamGPError, ValueError):
    pass


class UnknownScenario(StreamGPError, ValueError):
    pass


class ConfigError(StreamGPError, ValueError):
    pass


class MismatchedDatasets(StreamGPError, ValueError):
    pass


class EmptyTestSet(StreamGPError, ValueError):
    pass


class BatchAborted(StreamGPError):
    """A batch failed numerically; the stream state was left untouched."""

    def __init__(self, batch_index, cause):
        self.batch_index = batch_index
        self.cause = cause
        super().__init__(f"batch {batch_index} aborted: {type(cause).__name__}: {cause}")
