"""Writer for the embedding-exchange binary format.

The layout is fixed by the consuming harness: 8-byte magic, u16 version,
three u32-length-prefixed UTF-8 strings (model id, strategy, pooling),
u64 cell count, u64 dim, the cell ids as length-prefixed strings, then the
row-major little-endian float32 payload with nothing after it. This module
implements the producer side from that contract alone and shares no code
with the consumer, so a byte-level test against its reader is meaningful.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConsistencyError, ExportError

EXCHANGE_MAGIC = b"SCDMEMB1"
EXCHANGE_VERSION = 1

STRATEGIES = ("frozen", "finetuned")
POOLING_KINDS = ("mean_tokens", "cls_token", "concat4", "last_layer_mean")


def _write_str(buf: io.BytesIO, s: str) -> None:
    data = s.encode("utf-8")
    buf.write(struct.pack("<I", len(data)))
    buf.write(data)


def write_exchange(
    path,
    model_id: str,
    strategy: str,
    pooling: str,
    cell_ids: list[str],
    dim: int,
    blocks: Iterable[np.ndarray],
) -> Path:
    """Stream embedding row blocks into one exchange file.

    ``blocks`` yields 2-D arrays whose rows, concatenated, cover every cell
    exactly once in ``cell_ids`` order. The file is assembled in memory and
    written in a single operation, so a failing block never leaves a partial
    file behind.
    """
    if strategy not in STRATEGIES:
        raise ExportError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if pooling not in POOLING_KINDS:
        raise ExportError(f"pooling must be one of {POOLING_KINDS}, got {pooling!r}")
    if dim < 1:
        raise ExportError(f"dim must be >= 1, got {dim}")

    buf = io.BytesIO()
    buf.write(EXCHANGE_MAGIC)
    buf.write(struct.pack("<H", EXCHANGE_VERSION))
    _write_str(buf, model_id)
    _write_str(buf, strategy)
    _write_str(buf, pooling)
    buf.write(struct.pack("<Q", len(cell_ids)))
    buf.write(struct.pack("<Q", dim))
    for cell_id in cell_ids:
        _write_str(buf, cell_id)

    rows_written = 0
    for block in blocks:
        arr = np.ascontiguousarray(block, dtype="<f4")
        if arr.ndim != 2 or arr.shape[1] != dim:
            raise ConsistencyError(
                f"embedding block has shape {np.asarray(block).shape}; "
                f"expected (*, {dim})"
            )
        if not np.all(np.isfinite(arr)):
            raise ConsistencyError("embedding block contains non-finite values")
        buf.write(arr.tobytes())
        rows_written += arr.shape[0]
    if rows_written != len(cell_ids):
        raise ConsistencyError(
            f"embedder produced {rows_written} rows for {len(cell_ids)} cells"
        )

    path = Path(path)
    with open(path, "wb") as f:
        f.write(buf.getvalue())
    return path
