"""Exception hierarchy for the exporter shims."""


class ExportError(Exception):
    """Base class for everything this package raises on purpose."""


class UnknownModelError(ExportError):
    """Model id absent from the supported-model table."""


class ApiOnlyModelError(ExportError):
    """Model reachable only through a hosted API; it has no embedding export."""


class CheckpointError(ExportError):
    """Pretrained weights missing, unloadable, or no loader registered."""


class DimMismatchError(ExportError):
    """Embedder output width disagrees with the declared model dimension."""


class DataFormatError(ExportError):
    """Input dataset violates the on-disk matrix format."""


class ConsistencyError(ExportError):
    """Internal cross-check failed (row counts, non-finite values)."""
