"""Cell embeddings: pooling over token embeddings and the exchange format.

Pooling turns a T×d token-embedding matrix into one cell vector. Pads are
batching artifacts and never contribute to mean/max pooling; a CLS row is a
sequence-level slot and is likewise excluded from mean/max, while start/end
rows count as content. The exchange file is the binary contract between
embedding producers (this package's encoder or external exporters) and the
evaluation side.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import binio
from .errors import (
    CorruptionError,
    DataError,
    EmptyPoolError,
    FormatError,
    ParameterError,
    ShapeError,
)
from .registry import POOLING_KINDS, STRATEGIES
from .tokens import TokenSequence

EXCHANGE_MAGIC = b"SCDMEMB1"
EXCHANGE_VERSION = 1


@dataclass
class SpecialPositions:
    """Where the special rows sit in a token-embedding matrix.

    ``s_pos``/``t_pos`` name the two sequence-level indicator rows used by
    four-way concatenation; the start/end wrapper tokens play those roles.
    ``pad_mask`` flags rows to drop from every pooled statistic.
    """

    cls_pos: int | None = None
    s_pos: int | None = None
    t_pos: int | None = None
    pad_mask: np.ndarray | None = None

    @classmethod
    def from_sequence(cls, seq: TokenSequence) -> "SpecialPositions":
        return cls(
            cls_pos=seq.cls_pos,
            s_pos=seq.start_pos,
            t_pos=seq.end_pos,
            pad_mask=~seq.content_mask(),
        )


def _included_rows(n_rows: int, specials: SpecialPositions | None) -> np.ndarray:
    keep = np.ones(n_rows, dtype=bool)
    if specials is not None:
        if specials.pad_mask is not None:
            if len(specials.pad_mask) != n_rows:
                raise ShapeError(
                    f"pad mask length {len(specials.pad_mask)} does not match {n_rows} rows"
                )
            keep &= ~np.asarray(specials.pad_mask, dtype=bool)
        if specials.cls_pos is not None:
            keep[specials.cls_pos] = False
    return keep


def pool(token_embeddings: np.ndarray, kind: str, specials: SpecialPositions | None = None) -> np.ndarray:
    """Reduce a T×d token-embedding matrix to one cell-embedding vector."""
    E = np.asarray(token_embeddings, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] < 1:
        raise ShapeError(f"token embeddings must be (T, d) with T >= 1, got shape {E.shape}")
    if kind not in POOLING_KINDS:
        raise ParameterError(f"pooling must be one of {POOLING_KINDS}, got {kind!r}")

    if kind == "cls_token":
        if specials is None or specials.cls_pos is None:
            raise ParameterError("cls_token pooling requires a CLS position")
        if not (0 <= specials.cls_pos < E.shape[0]):
            raise ParameterError(f"CLS position {specials.cls_pos} outside {E.shape[0]} rows")
        return E[specials.cls_pos].copy()

    keep = _included_rows(E.shape[0], specials)
    rows = E[keep]
    if rows.shape[0] == 0:
        raise EmptyPoolError("every sequence position is padding; nothing to pool")

    if kind in ("mean_tokens", "last_layer_mean"):
        return rows.mean(axis=0)

    # concat4: [S row, T row, elementwise max, mean]; with no designated
    # indicator rows the first/last included rows stand in, which collapses
    # to one repeated row for a single-row input.
    s_pos = specials.s_pos if specials is not None and specials.s_pos is not None else None
    t_pos = specials.t_pos if specials is not None and specials.t_pos is not None else None
    included_idx = np.nonzero(keep)[0]
    s_row = E[s_pos] if s_pos is not None else E[included_idx[0]]
    t_row = E[t_pos] if t_pos is not None else E[included_idx[-1]]
    return np.concatenate([s_row, t_row, rows.max(axis=0), rows.mean(axis=0)])


def pool_backward(
    d_pooled: np.ndarray,
    token_embeddings: np.ndarray,
    kind: str,
    specials: SpecialPositions | None = None,
) -> np.ndarray:
    """Gradient of pool() with respect to the token-embedding matrix.

    Max pooling routes gradient to the first maximal row per dimension,
    matching the forward's argmax convention.
    """
    E = np.asarray(token_embeddings, dtype=np.float64)
    d_pooled = np.asarray(d_pooled, dtype=np.float64)
    dE = np.zeros_like(E)

    if kind == "cls_token":
        if specials is None or specials.cls_pos is None:
            raise ParameterError("cls_token pooling requires a CLS position")
        dE[specials.cls_pos] = d_pooled
        return dE

    keep = _included_rows(E.shape[0], specials)
    included_idx = np.nonzero(keep)[0]
    if included_idx.size == 0:
        raise EmptyPoolError("every sequence position is padding; nothing to pool")

    if kind in ("mean_tokens", "last_layer_mean"):
        dE[included_idx] = d_pooled / included_idx.size
        return dE

    d = E.shape[1]
    if d_pooled.shape != (4 * d,):
        raise ShapeError(f"concat4 gradient must have length {4 * d}, got {d_pooled.shape}")
    ds, dt, dmax, dmean = d_pooled[:d], d_pooled[d : 2 * d], d_pooled[2 * d : 3 * d], d_pooled[3 * d :]
    s_pos = specials.s_pos if specials is not None and specials.s_pos is not None else included_idx[0]
    t_pos = specials.t_pos if specials is not None and specials.t_pos is not None else included_idx[-1]
    dE[s_pos] += ds
    dE[t_pos] += dt
    winners = included_idx[np.argmax(E[included_idx], axis=0)]
    dE[winners, np.arange(d)] += dmax
    dE[included_idx] += dmean / included_idx.size
    return dE


def pooled_dim(kind: str, d_model: int) -> int:
    if kind not in POOLING_KINDS:
        raise ParameterError(f"pooling must be one of {POOLING_KINDS}, got {kind!r}")
    return 4 * d_model if kind == "concat4" else d_model


@dataclass
class EmbeddingMatrix:
    """Per-cell embeddings produced by one model under one training strategy."""

    model_id: str
    strategy: str
    pooling: str
    cell_ids: list[str]
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise DataError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.pooling not in POOLING_KINDS:
            raise DataError(f"pooling must be one of {POOLING_KINDS}, got {self.pooling!r}")
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ShapeError(f"embedding data must be 2-D, got shape {self.data.shape}")
        if len(self.cell_ids) != self.data.shape[0]:
            raise ShapeError(
                f"{len(self.cell_ids)} cell_ids for {self.data.shape[0]} embedding rows"
            )
        if not np.all(np.isfinite(self.data)):
            raise DataError("embedding matrix contains non-finite values")

    @property
    def n_cells(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def write_embeddings(matrix: EmbeddingMatrix, path) -> None:
    buf = io.BytesIO()
    buf.write(EXCHANGE_MAGIC)
    binio.write_u16(buf, EXCHANGE_VERSION)
    binio.write_str(buf, matrix.model_id)
    binio.write_str(buf, matrix.strategy)
    binio.write_str(buf, matrix.pooling)
    binio.write_u64(buf, matrix.n_cells)
    binio.write_u64(buf, matrix.dim)
    for cell_id in matrix.cell_ids:
        binio.write_str(buf, cell_id)
    buf.write(np.ascontiguousarray(matrix.data, dtype="<f4").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def read_embeddings(path) -> EmbeddingMatrix:
    with open(path, "rb") as f:
        magic = f.read(len(EXCHANGE_MAGIC))
        if magic != EXCHANGE_MAGIC:
            raise FormatError(f"bad magic {magic!r}; expected {EXCHANGE_MAGIC!r}")
        version = binio.read_u16(f, "version")
        if version != EXCHANGE_VERSION:
            raise FormatError(f"unsupported exchange version {version}")
        model_id = binio.read_str(f, "model_id")
        strategy = binio.read_str(f, "strategy")
        pooling = binio.read_str(f, "pooling")
        n_cells = binio.read_u64(f, "n_cells")
        dim = binio.read_u64(f, "dim")
        cell_ids = [binio.read_str(f, f"cell_id {i}") for i in range(n_cells)]
        payload = binio.read_exact(f, n_cells * dim * 4, "embedding payload")
        if f.read(1):
            raise CorruptionError("trailing bytes after embedding payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(n_cells, dim).copy()
    return EmbeddingMatrix(model_id, strategy, pooling, cell_ids, data)
