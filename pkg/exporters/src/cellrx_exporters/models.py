"""Embedder resolution: registered real-model shims plus the test stub.

Real checkpoints are huge, often access-gated, and need each model's own
runtime stack, so none are bundled. Integrations register a factory under
their model id; without one the loader fails with the checkpoint source so
the failure is actionable. The stub embedder is deterministic per cell id,
which makes order preservation and chunking invariance observable in tests
without any checkpoint.
"""

from __future__ import annotations

import zlib
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .errors import CheckpointError
from .registry import SupportedModel


class Embedder(Protocol):
    dim: int

    def embed_batch(self, cell_ids: list[str],
                    expressions: list[dict[int, float]]) -> np.ndarray: ...


class StubEmbedder:
    """Checkpoint-free embedder with reproducible per-cell rows.

    Each row is drawn from a generator seeded by the cell id alone, so the
    vector for a cell never depends on batch boundaries or position; with
    ``constant`` set, every row is that value everywhere.
    """

    def __init__(self, dim: int, constant: float | None = None):
        self.dim = dim
        self.constant = constant

    def embed_batch(self, cell_ids, expressions) -> np.ndarray:
        out = np.empty((len(cell_ids), self.dim), dtype=np.float32)
        if self.constant is not None:
            out.fill(self.constant)
            return out
        for i, cell_id in enumerate(cell_ids):
            rng = np.random.default_rng(zlib.crc32(cell_id.encode("utf-8")))
            out[i] = rng.standard_normal(self.dim).astype(np.float32)
        return out


EmbedderFactory = Callable[["ExporterSpec", SupportedModel], Embedder]

EMBEDDER_FACTORIES: dict[str, EmbedderFactory] = {}


def register_embedder(model_id: str, factory: EmbedderFactory) -> None:
    EMBEDDER_FACTORIES[model_id.lower()] = factory


def load_embedder(spec, row: SupportedModel) -> Embedder:
    factory = EMBEDDER_FACTORIES.get(row.model_id.lower())
    if factory is not None:
        return factory(spec, row)
    hint = f"pretrained weights: {row.checkpoint}"
    if row.note:
        hint = f"{hint} ({row.note})"
    if spec.checkpoint is None or not Path(spec.checkpoint).exists():
        raise CheckpointError(
            f"no checkpoint for {row.model_id} at {spec.checkpoint!r}; {hint}"
        )
    raise CheckpointError(
        f"no loader registered for {row.model_id} in this environment; "
        f"register one with register_embedder() ({hint})"
    )
