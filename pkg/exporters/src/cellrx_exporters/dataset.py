"""Minimal reader for the harness's on-disk expression matrices.

Both layouts are supported: the dense CSV (``cell_id,sample_id,<genes...>``
header, one row per cell) and the sparse triplet file (``#SPARSE`` header
plus a ``.meta.json`` sidecar naming cells, samples, and genes). Labels and
manifests are evaluation-side concerns and are ignored here; exporters only
need cells in file order with their expression values.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import DataFormatError


@dataclass
class ExportDataset:
    cell_ids: list[str]
    sample_ids: list[str]
    genes: list[str]
    expressions: list[dict[int, float]]  # gene index -> value, zeros omitted

    def __len__(self) -> int:
        return len(self.cell_ids)


def _parse_value(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(f"{where}: non-numeric expression value {text!r}") from None
    if not math.isfinite(value) or value < 0:
        raise DataFormatError(f"{where}: expression values must be finite and >= 0")
    return value


def _load_dense(path: Path) -> ExportDataset:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: empty matrix file")
        if len(header) < 3 or header[:2] != ["cell_id", "sample_id"]:
            raise DataFormatError(
                f"{path}: header must start with 'cell_id,sample_id' followed by genes"
            )
        genes = header[2:]
        cell_ids, sample_ids, expressions = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            expr = {}
            for j, text in enumerate(row[2:]):
                value = _parse_value(text, f"{path}:{lineno}")
                if value != 0.0:
                    expr[j] = value
            cell_ids.append(row[0])
            sample_ids.append(row[1])
            expressions.append(expr)
    return ExportDataset(cell_ids, sample_ids, genes, expressions)


def _load_sparse(path: Path) -> ExportDataset:
    sidecar = path.with_suffix(".meta.json")
    if not sidecar.exists():
        raise DataFormatError(f"{path}: sparse matrix requires sidecar {sidecar.name}")
    meta = json.loads(sidecar.read_text("utf-8"))
    for key in ("cell_ids", "sample_ids", "genes"):
        if key not in meta:
            raise DataFormatError(f"{sidecar}: missing key {key!r}")
    cell_ids, sample_ids, genes = meta["cell_ids"], meta["sample_ids"], meta["genes"]
    if len(cell_ids) != len(sample_ids):
        raise DataFormatError(f"{sidecar}: cell_ids and sample_ids lengths differ")

    with open(path, encoding="utf-8") as f:
        first = f.readline().split()
        if len(first) != 3 or first[0] != "#SPARSE":
            raise DataFormatError(f"{path}: sparse file must start with '#SPARSE n_cells n_genes'")
        try:
            n_cells, n_genes = int(first[1]), int(first[2])
        except ValueError:
            raise DataFormatError(f"{path}: malformed #SPARSE header counts") from None
        if n_cells != len(cell_ids) or n_genes != len(genes):
            raise DataFormatError(f"{path}: header counts disagree with {sidecar.name}")
        expressions: list[dict[int, float]] = [{} for _ in range(n_cells)]
        for lineno, line in enumerate(f, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 'row col value' triplet")
            try:
                r, c = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-integer row/col") from None
            if not (0 <= r < n_cells) or not (0 <= c < n_genes):
                raise DataFormatError(f"{path}:{lineno}: triplet ({r}, {c}) out of range")
            expressions[r][c] = _parse_value(parts[2], f"{path}:{lineno}")
    return ExportDataset(cell_ids, sample_ids, genes, expressions)


def load_export_dataset(path) -> ExportDataset:
    """Load a matrix in either on-disk layout, chosen by file extension."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"dataset not found: {path}")
    if path.suffix == ".sparse":
        return _load_sparse(path)
    return _load_dense(path)
