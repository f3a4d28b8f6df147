"""Exception taxonomy for the benchmarking harness.

Every error raised on purpose by this package derives from CellrxError so
callers can catch harness failures without swallowing programming errors.
"""


class CellrxError(Exception):
    """Base class for all harness errors."""


class FormatError(CellrxError):
    """A file does not follow its declared on-disk format."""


class CorruptionError(FormatError):
    """A file has the right framing but a truncated or damaged payload."""


class DataError(CellrxError):
    """Values are out of domain (negative expression, NaN, bad labels)."""


class ConsistencyError(CellrxError):
    """Two sources that must agree do not (matrix vs manifest counts)."""


class ParameterError(CellrxError):
    """An argument or configuration value is outside its allowed range."""


class ShapeError(CellrxError):
    """Array dimensions do not line up."""


class UnknownModelError(CellrxError):
    """Model id is not in the registry; message lists the known ids."""


class PromptOnlyModelError(CellrxError):
    """The model is registered but has no embedding descriptor."""


class TargetResolutionError(CellrxError):
    """An adapter target name does not resolve to an encoder matrix."""


class DegenerateDataError(CellrxError):
    """Training data that cannot be learned from (single class, too few rows)."""


class UndefinedMetricError(CellrxError):
    """A metric has no defined value on this input (single-class AUROC)."""


class DivergenceError(CellrxError):
    """Training produced a non-finite loss; message reports the step."""


class EmptyPoolError(CellrxError):
    """Pooling was asked to reduce zero eligible rows."""


class ResponseParseError(CellrxError):
    """An LLM reply did not match the expected answer grammar."""

    def __init__(self, message: str, raw_reply: str):
        super().__init__(message)
        self.raw_reply = raw_reply


class EvaluationError(CellrxError):
    """An evaluation run could not produce any result."""


class ConfigValidationError(CellrxError):
    """A run-configuration file failed validation."""


class MissingEmbeddingsError(CellrxError):
    """A requested external model has no embedding-exchange file."""
