"""Embedding exporters: real-checkpoint shims behind one exchange format."""

from .dataset import ExportDataset, load_export_dataset
from .errors import (
    ApiOnlyModelError,
    CheckpointError,
    ConsistencyError,
    DataFormatError,
    DimMismatchError,
    ExportError,
    UnknownModelError,
)
from .exchange import write_exchange
from .export import ExporterSpec, export_embeddings
from .models import StubEmbedder, register_embedder
from .registry import SupportedModel, list_supported, lookup

__version__ = "0.1.0"

__all__ = [
    "ApiOnlyModelError",
    "CheckpointError",
    "ConsistencyError",
    "DataFormatError",
    "DimMismatchError",
    "ExportDataset",
    "ExportError",
    "ExporterSpec",
    "StubEmbedder",
    "SupportedModel",
    "UnknownModelError",
    "__version__",
    "export_embeddings",
    "list_supported",
    "load_export_dataset",
    "lookup",
    "register_embedder",
    "write_exchange",
]
