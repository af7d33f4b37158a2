"""Exception taxonomy shared by all modules.

CLI exit codes: InvalidArgumentError/ConfigError map to 2 (usage), data
errors to 3, BackendUnavailableError to 4.
"""


class ProtoPromptError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(ProtoPromptError, ValueError):
    """A caller violated an operation's precondition."""


class ConfigError(InvalidArgumentError):
    """Bad configuration key or value."""


class EmptySupportError(ProtoPromptError):
    """Support mask has no positive cells at feature resolution."""


class EmptyPredictionError(ProtoPromptError):
    """No foreground pixels survive thresholding; refinement is skipped."""


class BackendUnavailableError(ProtoPromptError):
    """An external model backend could not be loaded or reached."""


class DataError(ProtoPromptError):
    """Base class for dataset/report persistence problems."""


class CorruptDatasetError(DataError):
    """Dataset tree violates the documented layout contract."""


class EmptyDatasetError(DataError):
    """Dataset root contains no items."""


class ClassNotFoundError(DataError):
    """Requested class is absent from a volume or manifest."""


class SchemaVersionError(DataError):
    """Persisted report has an incompatible schema version or shape."""


class InvalidComparisonError(DataError):
    """Two reports cannot be compared (fold/class mismatch)."""


class NonFiniteLossError(ProtoPromptError):
    """Training loss became NaN/inf; carries the diagnostic dump path."""

    def __init__(self, message: str, dump_path: str | None = None):
        super().__init__(message)
        self.dump_path = dump_path
