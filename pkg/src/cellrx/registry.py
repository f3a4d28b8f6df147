"""Registry of the ten benchmarked models and their adapter contracts.

Each entry records the published model characteristics (architecture flags,
parameter count, output dimension, publication month) together with the
input-preparation rule, pooling strategy, and LoRA target modules used for
drug-response evaluation. The desk-scale encoder stands in for the real
checkpoints, so targets also map onto its module names.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ParameterError, PromptOnlyModelError, UnknownModelError
from .tokens import PrepRule

POOLING_KINDS = ("mean_tokens", "cls_token", "concat4", "last_layer_mean")
STRATEGIES = ("frozen", "finetuned")


@dataclass(frozen=True)
class ModelInfo:
    model_id: str
    encoder_decoder: bool
    input_embedding: str
    sc_llm: bool
    params_millions: float | None
    output_dim: int | None
    pooling: str | None
    lora_targets: tuple[str, ...]
    specials: str
    max_len: int
    checkpoint_hint: str
    published: str | None


@dataclass(frozen=True)
class AdapterDescriptor:
    model_id: str
    output_dim: int
    pooling: str
    lora_targets: tuple[str, ...]
    max_len: int


# Sequence caps quoted per family: 64 (tGPT), 8000 (scBERT/CellLM), 2048
# (Geneformer), 1024 genes (LLaMa3-8B); families without a stated cap use a
# documented default of 2048.
DEFAULT_MAX_LEN = 2048

MODEL_REGISTRY: tuple[ModelInfo, ...] = (
    ModelInfo(
        "tGPT", False, "Genes", True, 124.5, 1024, "mean_tokens",
        ("c_attn",), "start_end_pad", 64,
        "https://huggingface.co/lixiangchun/transcriptome-gpt-1024-8-16-64",
        "2022-02",
    ),
    ModelInfo(
        "scBERT", False, "Expressions and genes", True, 8.9, 200, "mean_tokens",
        ("to_k", "to_v", "to_q"), "none", 8000,
        "https://github.com/TencentAILabHealthcare/scBERT",
        "2022-09",
    ),
    ModelInfo(
        "Geneformer", False, "Genes", True, 10.7, 256, "mean_tokens",
        ("key", "value", "query"), "none", 2048,
        "https://huggingface.co/ctheodoris/Geneformer/tree/main",
        "2023-05",
    ),
    ModelInfo(
        "CellLM", False, "Expressions and genes", True, 62.8, 512, "mean_tokens",
        ("to_k", "to_v", "to_q"), "none", 8000,
        "https://github.com/PharMolix/OpenBioMed/tree/main",
        "2023-06",
    ),
    ModelInfo(
        "scFoundation", True, "Expressions and genes", True, 121.2, 3072, "concat4",
        ("output_layer",), "start_end_pad", DEFAULT_MAX_LEN,
        "https://github.com/biomap-research/scFoundation",
        "2023-06",
    ),
    ModelInfo(
        "scGPT", True, "Expressions and genes", True, 52.5, 512, "cls_token",
        ("out_proj",), "cls_first", DEFAULT_MAX_LEN,
        "https://github.com/bowang-lab/scGPT",
        "2023-07",
    ),
    ModelInfo(
        "CellPLM", True, "Expressions", True, 66.6, 512, "last_layer_mean",
        ("query_projection", "key_projection", "value_projection"), "none", DEFAULT_MAX_LEN,
        "https://github.com/OmicsML/CellPLM",
        "2023-10",
    ),
    ModelInfo(
        "UCE", True, "Expressions", True, 849.9, 1280, "cls_token",
        ("out_proj",), "cls_first", DEFAULT_MAX_LEN,
        "https://github.com/snap-stanford/UCE",
        "2023-11",
    ),
    ModelInfo(
        "LLaMa3-8B", False, "NLP", False, None, 4096, "mean_tokens",
        (), "none", 1024,
        "https://huggingface.co/meta-llama/Meta-Llama-3-8B",
        None,
    ),
    ModelInfo(
        "GPT4o-mini", False, "NLP", False, None, None, None,
        (), "none", DEFAULT_MAX_LEN,
        "",
        None,
    ),
)

# The desk-scale encoder registered under its own id so every pipeline
# resolves through one lookup path. It is not part of the published table
# above; its dims match the default ToyEncoderConfig.
TOY_MODEL = ModelInfo(
    "toy_scfm", False, "Expressions and genes", True, None, 32, "mean_tokens",
    ("q_proj", "k_proj", "v_proj"), "start_end_pad", 64,
    "",
    None,
)

_BY_LOWER_ID = {info.model_id.lower(): info for info in MODEL_REGISTRY + (TOY_MODEL,)}

# The fused QKV projection ('c_attn') covers all three attention inputs;
# per-matrix names map one-to-one; output-layer targets map to the attention
# output projection, the only per-layer output matrix the toy encoder has.
_TOY_TARGET_MAP: dict[str, tuple[str, ...]] = {
    "c_attn": ("q_proj", "k_proj", "v_proj"),
    "to_q": ("q_proj",),
    "to_k": ("k_proj",),
    "to_v": ("v_proj",),
    "query": ("q_proj",),
    "key": ("k_proj",),
    "value": ("v_proj",),
    "query_projection": ("q_proj",),
    "key_projection": ("k_proj",),
    "value_projection": ("v_proj",),
    "out_proj": ("out_proj",),
    "output_layer": ("out_proj",),
    # toy-encoder module names pass through unchanged
    "q_proj": ("q_proj",),
    "k_proj": ("k_proj",),
    "v_proj": ("v_proj",),
}


def known_model_ids() -> list[str]:
    return [info.model_id for info in MODEL_REGISTRY] + [TOY_MODEL.model_id]


def model_info(model_id: str) -> ModelInfo:
    """Resolve a model id case-insensitively."""
    info = _BY_LOWER_ID.get(model_id.lower())
    if info is None:
        raise UnknownModelError(
            f"unknown model {model_id!r}; known models: {', '.join(known_model_ids())}"
        )
    return info


def registry_lookup(model_id: str) -> AdapterDescriptor:
    """Descriptor for an embedding-producing model; prompt-only models refuse."""
    info = model_info(model_id)
    if info.output_dim is None or info.pooling is None:
        raise PromptOnlyModelError(
            f"{info.model_id} produces no embeddings; it is evaluated through prompts only"
        )
    return AdapterDescriptor(
        model_id=info.model_id,
        output_dim=info.output_dim,
        pooling=info.pooling,
        lora_targets=info.lora_targets,
        max_len=info.max_len,
    )


def prep_rule_for(model_id: str) -> PrepRule:
    """Rank-token preparation rule used by the desk-scale encoder path.

    Binned-expression and symbol-text builders exist as standalone transforms;
    the encoder consumes rank tokens for every embedding family so that one
    input contract covers all of them.
    """
    info = model_info(model_id)
    if info.output_dim is None:
        raise PromptOnlyModelError(f"{info.model_id} has no token-sequence input")
    return PrepRule(
        family=info.model_id,
        max_len=info.max_len,
        specials=info.specials,
        representation="rank_tokens",
    )


def toy_targets_for(model_id: str) -> tuple[str, ...]:
    """Map a family's published LoRA targets onto toy-encoder module names."""
    info = model_info(model_id)
    if not info.lora_targets:
        raise ParameterError(f"{info.model_id} has no LoRA target modules")
    out: list[str] = []
    for target in info.lora_targets:
        for name in _TOY_TARGET_MAP[target]:
            if name not in out:
                out.append(name)
    return tuple(out)
