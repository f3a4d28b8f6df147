"""Supported models: id, checkpoint source, pooling, and output width.

This table mirrors the consumer-side model registry row for row (same ids,
same publication order, same pooling and dims); an interoperability test
keeps the two in lockstep. Checkpoints are user-supplied downloads, never
fetched here; access caveats are recorded per model.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ApiOnlyModelError, UnknownModelError


@dataclass(frozen=True)
class SupportedModel:
    model_id: str
    checkpoint: str
    pooling: str | None
    output_dim: int | None
    note: str = ""


SUPPORTED: tuple[SupportedModel, ...] = (
    SupportedModel(
        "tGPT",
        "https://huggingface.co/lixiangchun/transcriptome-gpt-1024-8-16-64",
        "mean_tokens", 1024,
    ),
    SupportedModel(
        "scBERT",
        "https://github.com/TencentAILabHealthcare/scBERT",
        "mean_tokens", 200,
        note="weights are requested through the authors' release form",
    ),
    SupportedModel(
        "Geneformer",
        "https://huggingface.co/ctheodoris/Geneformer/tree/main",
        "mean_tokens", 256,
    ),
    SupportedModel(
        "CellLM",
        "https://github.com/PharMolix/OpenBioMed/tree/main",
        "mean_tokens", 512,
    ),
    SupportedModel(
        "scFoundation",
        "https://github.com/biomap-research/scFoundation",
        "concat4", 3072,
    ),
    SupportedModel(
        "scGPT",
        "https://github.com/bowang-lab/scGPT",
        "cls_token", 512,
    ),
    SupportedModel(
        "CellPLM",
        "https://github.com/OmicsML/CellPLM",
        "last_layer_mean", 512,
    ),
    SupportedModel(
        "UCE",
        "https://github.com/snap-stanford/UCE",
        "cls_token", 1280,
    ),
    SupportedModel(
        "LLaMa3-8B",
        "https://huggingface.co/meta-llama/Meta-Llama-3-8B",
        "mean_tokens", 4096,
        note="access-gated: accept the model license before downloading",
    ),
    SupportedModel(
        "GPT4o-mini",
        "",
        None, None,
        note="hosted API only; evaluated through prompting, nothing to export",
    ),
)

_BY_LOWER_ID = {row.model_id.lower(): row for row in SUPPORTED}


def lookup(model_id: str) -> SupportedModel:
    row = _BY_LOWER_ID.get(model_id.lower())
    if row is None:
        known = ", ".join(row.model_id for row in SUPPORTED)
        raise UnknownModelError(f"unknown model {model_id!r}; supported: {known}")
    return row


def exportable(model_id: str) -> SupportedModel:
    """Look up a model and insist it actually produces embeddings."""
    row = lookup(model_id)
    if row.output_dim is None:
        raise ApiOnlyModelError(f"{row.model_id} cannot be exported: {row.note}")
    return row


def list_supported() -> list[tuple[str, str, str | None, int | None]]:
    """(model_id, checkpoint, pooling, output_dim) rows in publication order."""
    return [(r.model_id, r.checkpoint, r.pooling, r.output_dim) for r in SUPPORTED]
