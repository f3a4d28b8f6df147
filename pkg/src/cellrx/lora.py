"""Low-rank adaptation of the toy encoder and joint adapter+head fine-tuning.

Each adapter adds scale * A @ B on top of a frozen target matrix, with
A ~ gaussian(0, 0.02), B = 0 so the adapted forward equals the base forward
exactly at attach time. Fine-tuning backpropagates binary cross-entropy
through prep -> encode -> pool -> MLP and updates only adapter and head
parameters; base weights are never written.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import binio
from .data import Dataset
from .embeddings import SpecialPositions, pool, pool_backward, pooled_dim
from .encoder import ToyEncoder, effective_rule, sequence_batch
from .errors import (
    DataError,
    DivergenceError,
    ParameterError,
    TargetResolutionError,
)
from .mlp import (
    MlpParams,
    TrainConfig,
    TrainedHead,
    check_both_classes,
    fit_scaler,
    grad_with_input,
    init_mlp,
)
from .optim import make_optimizer
from .registry import AdapterDescriptor, prep_rule_for
from .rng import make_rng
from .tokens import prep_rank_sequence

A_INIT_STD = 0.02


@dataclass
class LoraConfig:
    target_names: list[str]
    rank: int = 8
    alpha: float = 8.0
    dropout: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ParameterError(f"rank must be >= 1, got {self.rank}")
        if not (0.0 <= self.dropout < 1.0):
            raise ParameterError(f"dropout must be in [0, 1), got {self.dropout}")
        if not self.target_names:
            raise ParameterError("target_names must be non-empty")

    @property
    def scale(self) -> float:
        return self.alpha / self.rank


@dataclass
class LoraAdapter:
    """Trainable pair (A, B) for one d×k target matrix."""

    a: np.ndarray
    b: np.ndarray
    scale: float
    dropout: float

    @property
    def rank(self) -> int:
        return self.a.shape[1]

    def delta(self) -> np.ndarray:
        return self.scale * (self.a @ self.b)

    def parameter_count(self) -> int:
        return self.a.size + self.b.size


@dataclass
class AdaptedEncoder:
    base: ToyEncoder
    adapters: dict[str, LoraAdapter]
    config: LoraConfig


def resolve_targets(encoder: ToyEncoder, target_names: list[str]) -> list[str]:
    """Expand bare projection names to every layer; keep full names as given."""
    available = [
        f"layers.{i}.{kind}"
        for i in range(encoder.config.n_layers)
        for kind in ("q_proj", "k_proj", "v_proj", "out_proj")
    ]
    resolved: list[str] = []
    for target in target_names:
        if target in ("q_proj", "k_proj", "v_proj", "out_proj"):
            matches = [name for name in available if name.endswith("." + target)]
        elif target in available:
            matches = [target]
        else:
            raise TargetResolutionError(
                f"cannot resolve LoRA target {target!r}; available: "
                f"q_proj, k_proj, v_proj, out_proj or any of {available}"
            )
        for name in matches:
            if name in resolved:
                raise TargetResolutionError(f"target {name!r} resolved more than once")
            resolved.append(name)
    return resolved


def attach(encoder: ToyEncoder, config: LoraConfig) -> AdaptedEncoder:
    """Create zero-effect adapters on every resolved target matrix."""
    rng = make_rng(config.seed, 21)
    adapters: dict[str, LoraAdapter] = {}
    for name in resolve_targets(encoder, config.target_names):
        W = encoder.params[name + ".weight"]
        d, k = W.shape
        adapters[name] = LoraAdapter(
            a=rng.normal(0.0, A_INIT_STD, size=(d, config.rank)),
            b=np.zeros((config.rank, k)),
            scale=config.scale,
            dropout=config.dropout,
        )
    return AdaptedEncoder(encoder, adapters, config)


def effective_weight(adapter: LoraAdapter, w_base: np.ndarray) -> np.ndarray:
    if w_base.shape != (adapter.a.shape[0], adapter.b.shape[1]):
        raise ParameterError(
            f"adapter shaped {adapter.a.shape[0]}x{adapter.b.shape[1]} cannot adapt "
            f"a {w_base.shape} matrix"
        )
    return w_base + adapter.delta()


def merge_adapters(adapted: AdaptedEncoder) -> ToyEncoder:
    """Materialize W' = W + scale*A@B into a standalone encoder copy."""
    params = {name: arr.copy() for name, arr in adapted.base.params.items()}
    for name, adapter in adapted.adapters.items():
        params[name + ".weight"] = effective_weight(adapter, params[name + ".weight"])
    return ToyEncoder(adapted.base.config, params)


def trainable_parameter_count(adapted: AdaptedEncoder | None, head: MlpParams | None) -> int:
    total = 0
    if adapted is not None:
        total += sum(a.parameter_count() for a in adapted.adapters.values())
    if head is not None:
        total += head.count()
    return total


@dataclass
class FineTuneResult:
    adapters: dict[str, LoraAdapter]
    head: TrainedHead
    loss_curve: list[float]
    steps: int


def _pool_batch(out, seqs, pad, pooling):
    pooled = np.zeros((out.shape[0], pooled_dim(pooling, out.shape[2])))
    specials = []
    for j, seq in enumerate(seqs):
        sp = SpecialPositions.from_sequence(seq)
        sp.pad_mask = pad[j]
        specials.append(sp)
        pooled[j] = pool(out[j], pooling, sp)
    return pooled, specials


def fine_tune(
    adapted: AdaptedEncoder,
    head: MlpParams | None,
    dataset: Dataset,
    descriptor: AdapterDescriptor,
    config: TrainConfig | None = None,
) -> FineTuneResult:
    """Jointly train adapters and head; mutates both in place and returns them.

    The embedding scaler is fit once on attach-time (pre-training) pooled
    embeddings of the training data and stays fixed while adapters move, so
    train and evaluation transforms agree.
    """
    config = config or TrainConfig()
    encoder = adapted.base
    labels = dataset.labels_array().astype(np.float64)
    check_both_classes(labels)

    for cell in dataset.cells:
        if not cell.expression:
            raise DataError(f"cell {cell.cell_id!r} has no expressed genes to fine-tune on")
    rule = effective_rule(encoder, prep_rule_for(descriptor.model_id))
    seqs = [prep_rank_sequence(cell, rule) for cell in dataset.cells]

    dim = pooled_dim(descriptor.pooling, encoder.config.d_model)
    if head is None:
        head = init_mlp(dim, config.hidden1, config.hidden2, config.seed)
    elif head.input_dim != dim:
        raise ParameterError(f"head expects dim {head.input_dim}, pooled dim is {dim}")

    scaler_mean = scaler_std = None
    if config.standardize:
        tokens, pad = sequence_batch(seqs)
        init_out, _ = encoder.forward_batch(tokens, pad, adapters=adapted.adapters)
        init_pooled, _ = _pool_batch(init_out, seqs, pad, descriptor.pooling)
        scaler_mean, scaler_std = fit_scaler(init_pooled)

    trainable: dict[str, np.ndarray] = {}
    for name, adapter in adapted.adapters.items():
        trainable[name + ".a"] = adapter.a
        trainable[name + ".b"] = adapter.b
    head_dict = head.as_dict()
    trainable.update({"head." + k: v for k, v in head_dict.items()})

    opt = make_optimizer(config.optimizer, config.learning_rate, config.betas, config.eps)
    shuffle_rng = make_rng(config.seed, 12)
    dropout_rng = make_rng(config.seed, 13)

    n = len(dataset)
    steps = 0
    loss_curve: list[float] = []
    done = False
    for _ in range(config.epochs):
        if done:
            break
        order = shuffle_rng.permutation(n)
        epoch_losses = []
        for lo in range(0, n, config.batch_size):
            if config.max_steps is not None and steps >= config.max_steps:
                done = True
                break
            idx = order[lo : lo + config.batch_size]
            batch_seqs = [seqs[i] for i in idx]
            tokens, pad = sequence_batch(batch_seqs)
            out, cache = encoder.forward_batch(
                tokens, pad, adapters=adapted.adapters, train=True, rng=dropout_rng
            )
            pooled, specials = _pool_batch(out, batch_seqs, pad, descriptor.pooling)
            X = pooled
            if scaler_mean is not None:
                X = (pooled - scaler_mean) / scaler_std

            head_grads, dX, loss = grad_with_input(head, X, labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at step {steps}")
            if scaler_mean is not None:
                dX = dX / scaler_std

            d_out = np.zeros_like(out)
            for j in range(len(idx)):
                d_out[j] = pool_backward(dX[j], out[j], descriptor.pooling, specials[j])
            enc_grads = encoder.backward_batch(cache, d_out)

            grads = {"head." + k: v for k, v in head_grads.items()}
            for name, (da, db) in enc_grads.adapter_grads.items():
                grads[name + ".a"] = da
                grads[name + ".b"] = db
            opt.step(trainable, grads)

            # Optimizer steps rebind dict entries; push them back into the
            # owning structures so in-place mutation stays the contract.
            for name, adapter in adapted.adapters.items():
                adapter.a = trainable[name + ".a"]
                adapter.b = trainable[name + ".b"]
            for k in head_dict:
                head_dict[k][...] = trainable["head." + k]

            epoch_losses.append(loss)
            steps += 1
        if epoch_losses:
            loss_curve.append(float(np.mean(epoch_losses)))

    trained_head = TrainedHead(head, loss_curve, config, scaler_mean, scaler_std)
    return FineTuneResult(adapted.adapters, trained_head, loss_curve, steps)


def save_adapters(adapted: AdaptedEncoder, path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, adapter in adapted.adapters.items():
        arrays[name + ".a"] = adapter.a
        arrays[name + ".b"] = adapter.b
    meta = {
        "target_names": list(adapted.config.target_names),
        "rank": adapted.config.rank,
        "alpha": adapted.config.alpha,
        "dropout": adapted.config.dropout,
        "seed": adapted.config.seed,
        "resolved": sorted(adapted.adapters),
    }
    binio.save_arrays(path, "lora_adapters", arrays, meta)


def load_adapters(encoder: ToyEncoder, path) -> AdaptedEncoder:
    kind, arrays, meta = binio.load_arrays(path)
    if kind != "lora_adapters":
        raise DataError(f"expected a lora_adapters sidecar, found kind {kind!r}")
    config = LoraConfig(
        target_names=list(meta["target_names"]),
        rank=int(meta["rank"]),
        alpha=float(meta["alpha"]),
        dropout=float(meta["dropout"]),
        seed=int(meta["seed"]),
    )
    adapters = {
        name: LoraAdapter(
            a=arrays[name + ".a"], b=arrays[name + ".b"],
            scale=config.scale, dropout=config.dropout,
        )
        for name in meta["resolved"]
    }
    return AdaptedEncoder(encoder, adapters, config)
