"""The export pipeline: dataset -> embedder -> validated exchange file."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .dataset import ExportDataset, load_export_dataset
from .errors import DimMismatchError, ExportError
from .exchange import write_exchange
from .models import Embedder, load_embedder
from .registry import exportable

@dataclass(frozen=True)
class ExporterSpec:
    """Everything one export needs: which model, what data, where to."""

    model_id: str
    data_path: str
    out_path: str
    checkpoint: str | None = None
    device: str = "cpu"
    chunk_size: int | None = None

    def __post_init__(self):
        exportable(self.model_id)  # unknown / API-only ids fail here
        if self.chunk_size is not None and self.chunk_size < 1:
            raise ExportError(f"chunk_size must be >= 1, got {self.chunk_size}")


def _embed_blocks(embedder: Embedder, dataset: ExportDataset,
                  chunk_size: int | None) -> Iterator[np.ndarray]:
    n = len(dataset)
    chunk = chunk_size or n
    start = 0
    while start < n:
        stop = min(start + chunk, n)
        try:
            block = embedder.embed_batch(
                dataset.cell_ids[start:stop], dataset.expressions[start:stop])
        except MemoryError:
            if chunk == 1:
                raise  # a single cell does not fit; nothing left to shrink
            chunk = max(1, chunk // 2)  # retry the same span in smaller pieces
            continue
        yield block
        start = stop


def export_embeddings(spec: ExporterSpec, embedder: Embedder | None = None) -> Path:
    """Write one exchange file for ``spec`` and return its path.

    The embedder defaults to the registered shim for the model (tests supply
    a stub instead). Output width is checked against the declared model
    dimension before anything touches the output path; a mismatch is always
    an error, never a reshape. Row order follows dataset order, and chunked
    processing produces byte-identical files because each cell's embedding
    is independent of batch boundaries.
    """
    row = exportable(spec.model_id)
    dataset = load_export_dataset(spec.data_path)
    if len(dataset) == 0:
        raise ExportError(f"{spec.data_path}: dataset has no cells, nothing to export")
    if embedder is None:
        embedder = load_embedder(spec, row)
    if embedder.dim != row.output_dim:
        raise DimMismatchError(
            f"embedder for {row.model_id} produces dim {embedder.dim}, "
            f"registry declares {row.output_dim}; refusing to reshape"
        )
    return write_exchange(
        spec.out_path,
        row.model_id,
        "frozen",
        row.pooling,
        dataset.cell_ids,
        row.output_dim,
        _embed_blocks(embedder, dataset, spec.chunk_size),
    )
