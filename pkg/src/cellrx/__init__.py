"""Benchmarking harness for single-cell drug-response prediction.

The package evaluates embedding models under two tuning strategies (frozen
encoder with a trained head, or low-rank adapter fine-tuning) across pooled
and cross-study scenarios, scores few-shot prompting of an external LLM,
and profiles throughput. A desk-scale trainable encoder stands in for
published checkpoints; real embeddings enter through the binary exchange
format.
"""

__version__ = "0.1.0"

from .data import (
    CellProfile,
    Dataset,
    DatasetManifest,
    GeneVocabulary,
    SyntheticSpec,
    group_by_category,
    load_dataset,
    synthesize_dataset,
    synthesize_studies,
    write_dataset,
)
from .embeddings import EmbeddingMatrix, pool, read_embeddings, write_embeddings
from .encoder import (
    ToyEncoder,
    ToyEncoderConfig,
    embed_dataset,
    init_encoder,
    load_encoder,
    save_encoder,
)
from .errors import CellrxError
from .evaluation import (
    MetricSet,
    ResultRecord,
    aggregate,
    compute_metrics,
    cross_evaluate,
    make_kfold,
    pooled_evaluate,
)
from .lora import LoraConfig, attach, fine_tune, load_adapters, merge_adapters, save_adapters
from .mlp import MlpClassifier, TrainConfig, predict, train_frozen
from .pipelines import FileEmbeddingPipeline, FrozenToyPipeline, LoraToyPipeline
from .profiling import ProfileRecord, profile
from .prompts import (
    DEFAULT_TEMPLATE,
    LlmClient,
    PromptTemplate,
    build_prompt,
    evaluate_fewshot,
    parse_response,
)
from .registry import MODEL_REGISTRY, model_info, registry_lookup

__all__ = [
    "CellProfile",
    "CellrxError",
    "Dataset",
    "DatasetManifest",
    "DEFAULT_TEMPLATE",
    "EmbeddingMatrix",
    "FileEmbeddingPipeline",
    "FrozenToyPipeline",
    "GeneVocabulary",
    "LlmClient",
    "LoraConfig",
    "LoraToyPipeline",
    "MetricSet",
    "MlpClassifier",
    "MODEL_REGISTRY",
    "ProfileRecord",
    "PromptTemplate",
    "ResultRecord",
    "SyntheticSpec",
    "ToyEncoder",
    "ToyEncoderConfig",
    "TrainConfig",
    "aggregate",
    "attach",
    "build_prompt",
    "compute_metrics",
    "cross_evaluate",
    "embed_dataset",
    "evaluate_fewshot",
    "fine_tune",
    "group_by_category",
    "init_encoder",
    "load_adapters",
    "load_dataset",
    "load_encoder",
    "make_kfold",
    "merge_adapters",
    "model_info",
    "parse_response",
    "pool",
    "pooled_evaluate",
    "predict",
    "profile",
    "read_embeddings",
    "registry_lookup",
    "save_adapters",
    "save_encoder",
    "synthesize_dataset",
    "synthesize_studies",
    "train_frozen",
    "write_dataset",
    "write_embeddings",
]
