"""Model+strategy pipelines driven by the evaluation scenarios.

A pipeline prepares a pooled cell collection once, then answers
``run_split(train_idx, test_idx, tag)`` with sensitivity probabilities for
the test cells. Frozen pipelines embed once and retrain only the head per
split; the fine-tuning pipeline trains fresh adapters per split with a seed
derived from the split tag. A file-backed pipeline serves embeddings
produced externally through the exchange format.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import CellProfile, Dataset, DatasetManifest, GeneVocabulary
from .embeddings import EmbeddingMatrix, read_embeddings
from .encoder import ToyEncoder, embed_dataset
from .errors import ConsistencyError, DataError, MissingEmbeddingsError
from .lora import LoraConfig, attach, fine_tune
from .mlp import TrainConfig, predict, train_frozen
from .profiling import planned_steps
from .registry import registry_lookup, toy_targets_for
from .rng import derive_seed


@dataclass
class PooledCells:
    """Concatenation of labeled datasets sharing one vocabulary."""

    vocabulary: GeneVocabulary
    cells: list[CellProfile]
    labels: np.ndarray
    study_ids: np.ndarray  # study of each cell, aligned to cells
    cell_keys: list[str]   # study-qualified ids, unique across the pool


def pool_datasets(datasets: list[Dataset]) -> PooledCells:
    if not datasets:
        raise DataError("cannot pool zero datasets")
    vocab = datasets[0].vocabulary
    cells: list[CellProfile] = []
    labels: list[int] = []
    study_ids: list[str] = []
    keys: list[str] = []
    for ds in datasets:
        if ds.vocabulary != vocab:
            raise ConsistencyError(
                f"dataset {ds.manifest.study_id!r} uses a different gene vocabulary; "
                "pooled evaluation requires one shared vocabulary"
            )
        for cell in ds.cells:
            if cell.label is None:
                raise DataError(
                    f"cell {cell.cell_id!r} in {ds.manifest.study_id!r} is unlabeled"
                )
            cells.append(cell)
            labels.append(cell.label)
            study_ids.append(ds.manifest.study_id)
            keys.append(f"{ds.manifest.study_id}/{cell.cell_id}")
    return PooledCells(
        vocabulary=vocab,
        cells=cells,
        labels=np.asarray(labels, dtype=np.int64),
        study_ids=np.asarray(study_ids, dtype=object),
        cell_keys=keys,
    )


def subset_dataset(pooled: PooledCells, idx: np.ndarray, study_id: str) -> Dataset:
    """Wrap a pooled index subset as a Dataset with study-qualified cell ids."""
    cells = [
        replace(pooled.cells[i], cell_id=pooled.cell_keys[i]) for i in np.asarray(idx)
    ]
    manifest = DatasetManifest(
        study_id=study_id,
        tissue="pooled",
        cancer_type="pooled",
        therapy_type="pooled",
        regimen="pooled",
        n_cells=len(cells),
        collection="primary",
    )
    return Dataset(manifest, pooled.vocabulary, cells)


class FrozenToyPipeline:
    """Layer-freezing strategy: embed once, train only the head per split."""

    strategy = "frozen"

    def __init__(self, encoder: ToyEncoder, model_id: str, train_config: TrainConfig | None = None):
        self.encoder = encoder
        self.descriptor = registry_lookup(model_id)
        self.model_id = self.descriptor.model_id
        self.train_config = train_config or TrainConfig()

    def prepare(self, datasets: list[Dataset]) -> np.ndarray:
        self.pooled = pool_datasets(datasets)
        full = subset_dataset(self.pooled, np.arange(len(self.pooled.cells)), "pooled-all")
        matrix = embed_dataset(self.encoder, full, self.descriptor, strategy="frozen")
        self.X = matrix.data.astype(np.float64)
        self.labels = self.pooled.labels
        self.study_ids = self.pooled.study_ids
        return self.labels

    def run_split(self, train_idx, test_idx, tag: str) -> np.ndarray:
        head = train_frozen(self.X[train_idx], self.labels[train_idx], self.train_config)
        return predict(head, self.X[test_idx])

    def training_task(self, dataset: Dataset):
        labels = dataset.labels_array()
        matrix = embed_dataset(self.encoder, dataset, self.descriptor, strategy="frozen")
        X = matrix.data.astype(np.float64)
        cfg = self.train_config
        steps = planned_steps(len(labels), cfg.batch_size, cfg.epochs, cfg.max_steps)

        def task() -> int:
            train_frozen(X, labels, cfg)
            return steps

        return task

    def inference_task(self, dataset: Dataset, batch_size: int = 64):
        n_batches = -(-len(dataset.cells) // batch_size)

        def task() -> int:
            embed_dataset(
                self.encoder, dataset, self.descriptor,
                strategy="frozen", batch_size=batch_size,
            )
            return n_batches

        return task


class LoraToyPipeline:
    """Fine-tuning strategy: fresh adapters + head trained jointly per split."""

    strategy = "finetuned"

    def __init__(
        self,
        encoder: ToyEncoder,
        model_id: str,
        train_config: TrainConfig | None = None,
        lora_rank: int = 8,
        lora_alpha: float = 8.0,
        lora_dropout: float = 0.05,
        seed: int = 0,
    ):
        self.encoder = encoder
        self.descriptor = registry_lookup(model_id)
        self.model_id = self.descriptor.model_id
        self.train_config = train_config or TrainConfig()
        self.targets = list(toy_targets_for(model_id))
        self.lora_rank = lora_rank
        self.lora_alpha = lora_alpha
        self.lora_dropout = lora_dropout
        self.seed = seed

    def prepare(self, datasets: list[Dataset]) -> np.ndarray:
        self.pooled = pool_datasets(datasets)
        self.labels = self.pooled.labels
        self.study_ids = self.pooled.study_ids
        return self.labels

    def run_split(self, train_idx, test_idx, tag: str) -> np.ndarray:
        split_seed = derive_seed(self.seed, hash_tag(tag))
        lora_config = LoraConfig(
            target_names=list(self.targets),
            rank=self.lora_rank,
            alpha=self.lora_alpha,
            dropout=self.lora_dropout,
            seed=split_seed,
        )
        adapted = attach(self.encoder, lora_config)
        train_ds = subset_dataset(self.pooled, train_idx, f"train-{tag}")
        config = replace(self.train_config, seed=split_seed)
        result = fine_tune(adapted, None, train_ds, self.descriptor, config)

        test_ds = subset_dataset(self.pooled, test_idx, f"test-{tag}")
        matrix = embed_dataset(
            self.encoder, test_ds, self.descriptor,
            strategy="finetuned", adapters=result.adapters,
        )
        return predict(result.head, matrix.data.astype(np.float64))

    def _lora_config(self, seed: int) -> LoraConfig:
        return LoraConfig(
            target_names=list(self.targets),
            rank=self.lora_rank,
            alpha=self.lora_alpha,
            dropout=self.lora_dropout,
            seed=seed,
        )

    def training_task(self, dataset: Dataset):
        dataset.labels_array()  # fail fast on unlabeled data
        config = replace(self.train_config, seed=self.seed)

        def task() -> int:
            adapted = attach(self.encoder, self._lora_config(self.seed))
            result = fine_tune(adapted, None, dataset, self.descriptor, config)
            return result.steps

        return task

    def inference_task(self, dataset: Dataset, batch_size: int = 64):
        adapters = attach(self.encoder, self._lora_config(self.seed)).adapters
        n_batches = -(-len(dataset.cells) // batch_size)

        def task() -> int:
            embed_dataset(
                self.encoder, dataset, self.descriptor,
                strategy="finetuned", adapters=adapters, batch_size=batch_size,
            )
            return n_batches

        return task


def hash_tag(tag: str) -> int:
    """Stable small integer for a split tag (builtin string hashes are salted)."""
    value = 0
    for ch in tag:
        value = (value * 131 + ord(ch)) % (2**31 - 1)
    return value


class FileEmbeddingPipeline:
    """Frozen-style pipeline over embeddings read from exchange files.

    The file must cover the pooled cells exactly, in pool order, keyed by
    study-qualified cell ids.
    """

    def __init__(self, path, train_config: TrainConfig | None = None,
                 expected_model: str | None = None):
        self.path = Path(path)
        self.train_config = train_config or TrainConfig()
        self.expected_model = expected_model

    def prepare(self, datasets: list[Dataset]) -> np.ndarray:
        if not self.path.exists():
            name = self.expected_model or "the requested model"
            raise MissingEmbeddingsError(
                f"no embedding exchange file at {self.path}; produce one for {name} "
                "with an exporter and point the run at it"
            )
        matrix: EmbeddingMatrix = read_embeddings(self.path)
        if self.expected_model and matrix.model_id.lower() != self.expected_model.lower():
            raise ConsistencyError(
                f"{self.path} holds embeddings for {matrix.model_id!r}, "
                f"expected {self.expected_model!r}"
            )
        self.model_id = matrix.model_id
        self.strategy = matrix.strategy
        self.pooled = pool_datasets(datasets)
        if matrix.cell_ids != self.pooled.cell_keys:
            if sorted(matrix.cell_ids) == sorted(self.pooled.cell_keys):
                pos = {cid: i for i, cid in enumerate(matrix.cell_ids)}
                order = [pos[key] for key in self.pooled.cell_keys]
                matrix = EmbeddingMatrix(
                    matrix.model_id, matrix.strategy, matrix.pooling,
                    list(self.pooled.cell_keys), matrix.data[order],
                )
            else:
                raise ConsistencyError(
                    f"{self.path} covers different cells than the pooled collection "
                    f"({matrix.n_cells} rows vs {len(self.pooled.cell_keys)} cells)"
                )
        self.X = matrix.data.astype(np.float64)
        self.labels = self.pooled.labels
        self.study_ids = self.pooled.study_ids
        return self.labels

    def run_split(self, train_idx, test_idx, tag: str) -> np.ndarray:
        head = train_frozen(self.X[train_idx], self.labels[train_idx], self.train_config)
        return predict(head, self.X[test_idx])
