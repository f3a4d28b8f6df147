"""Command-line entry point: one export per invocation."""

from __future__ import annotations

import argparse
import sys

from .errors import (
    ApiOnlyModelError,
    CheckpointError,
    ConsistencyError,
    DataFormatError,
    DimMismatchError,
    ExportError,
    UnknownModelError,
)
from .export import ExporterSpec, export_embeddings
from .models import StubEmbedder
from .registry import exportable, list_supported

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


def _print_supported() -> None:
    rows = list_supported()
    width = max(len(r[0]) for r in rows)
    for model_id, checkpoint, pooling, dim in rows:
        pooling = pooling or "-"
        dim_text = str(dim) if dim is not None else "-"
        source = checkpoint or "(hosted API)"
        print(f"{model_id:<{width}}  {pooling:<15}  {dim_text:>5}  {source}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cellrx-export",
        description="Export per-cell embeddings to the exchange binary format.",
    )
    parser.add_argument("--model", help="model id (see --list)")
    parser.add_argument("--data", help="expression matrix path")
    parser.add_argument("--out", help="output exchange file path")
    parser.add_argument("--checkpoint", help="local pretrained weights path")
    parser.add_argument("--device", default="cpu", help="device hint for the shim")
    parser.add_argument("--chunk-size", type=int,
                        help="embed this many cells at a time")
    parser.add_argument("--stub", action="store_true",
                        help="use the deterministic stub embedder (no checkpoint)")
    parser.add_argument("--list", action="store_true",
                        help="print the supported-model table and exit")
    args = parser.parse_args(argv)

    if args.list:
        _print_supported()
        return EXIT_OK
    missing = [name for name in ("model", "data", "out")
               if getattr(args, name) is None]
    if missing:
        print(f"error: missing required arguments: {', '.join('--' + m for m in missing)}",
              file=sys.stderr)
        return EXIT_USAGE

    try:
        spec = ExporterSpec(
            model_id=args.model,
            data_path=args.data,
            out_path=args.out,
            checkpoint=args.checkpoint,
            device=args.device,
            chunk_size=args.chunk_size,
        )
        embedder = StubEmbedder(exportable(args.model).output_dim) if args.stub else None
        path = export_embeddings(spec, embedder=embedder)
    except (UnknownModelError, ApiOnlyModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, DataFormatError, DimMismatchError,
            ConsistencyError, ExportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    print(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
