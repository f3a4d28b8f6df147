"""Desk-scale transformer encoder with hand-written forward and backward.

The encoder is a deterministic stand-in for pretrained checkpoints: pre-norm
multi-head attention plus a tanh-GELU feed-forward, learned positional table,
all weights frozen after init. Low-rank additive adapters may be attached to
the attention projections (q/k/v/out); only those receive gradients, computed
by the explicit reverse pass below. Everything runs in float64 so gradients
can be validated against central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import binio
from .data import CellProfile, Dataset
from .embeddings import EmbeddingMatrix, SpecialPositions, pool, pooled_dim
from .errors import DataError, EmptyPoolError, ParameterError
from .registry import AdapterDescriptor, model_info
from .rng import make_rng
from .tokens import PAD_ID, PrepRule, TokenSequence, prep_rank_sequence

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715
_MASK_NEG = -1e30

PROJECTION_KINDS = ("q_proj", "k_proj", "v_proj", "out_proj")


@dataclass
class ToyEncoderConfig:
    vocab_size: int
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int | None = None
    max_len: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 2 * self.d_model
        for name in ("vocab_size", "d_model", "n_heads", "n_layers", "d_ff", "max_len"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads != 0:
            raise ParameterError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )

    def to_meta(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "d_ff": self.d_ff,
            "max_len": self.max_len,
            "seed": self.seed,
        }


def parameter_count(config: ToyEncoderConfig) -> int:
    """Closed-form size of the parameter layout built by init_encoder."""
    d, dff = config.d_model, config.d_ff
    per_layer = 4 * d * d + 2 * d * dff + dff + d + 4 * d
    return (config.vocab_size + config.max_len) * d + config.n_layers * per_layer + 2 * d


def _gelu(u: np.ndarray) -> np.ndarray:
    return 0.5 * u * (1.0 + np.tanh(_GELU_C * (u + _GELU_A * u**3)))


def _gelu_grad(u: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (u + _GELU_A * u**3))
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t**2) * _GELU_C * (1.0 + 3.0 * _GELU_A * u**2)


def _layer_norm(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return gamma * xhat + beta, (xhat, inv, gamma)


def _layer_norm_backward(dy, cache):
    xhat, inv, gamma = cache
    dxhat = dy * gamma
    return inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )


@dataclass
class EncoderGrads:
    """Gradients from one reverse pass.

    ``adapter_grads`` maps projection name -> (dA, dB); ``weight_grads`` maps
    the same names to gradients with respect to the base weight matrix, kept
    for finite-difference validation.
    """

    adapter_grads: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    weight_grads: dict[str, np.ndarray] = field(default_factory=dict)


class ToyEncoder:
    """Immutable frozen weights; adapters are supplied per call, never stored."""

    def __init__(self, config: ToyEncoderConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    # ------------------------------------------------------------- forward

    def _project(self, name, x, adapters, train, rng, cache):
        """x @ W plus, when attached, the low-rank adapter path with dropout."""
        W = self.params[name + ".weight"]
        y = x @ W
        adapter = adapters.get(name) if adapters else None
        proj_cache = {"x": x, "name": name, "adapter": adapter}
        if adapter is not None:
            x_a = x
            drop_scale = None
            if train and adapter.dropout > 0.0:
                if rng is None:
                    raise ParameterError("dropout during training requires an rng")
                keep = 1.0 - adapter.dropout
                mask = (rng.random(x.shape) < keep).astype(np.float64)
                drop_scale = mask / keep
                x_a = x * drop_scale
            mid = x_a @ adapter.a
            y = y + (mid @ adapter.b) * adapter.scale
            proj_cache.update({"x_a": x_a, "mid": mid, "drop_scale": drop_scale})
        cache[name] = proj_cache
        return y

    def forward_batch(
        self,
        tokens: np.ndarray,
        pad_mask: np.ndarray | None = None,
        adapters: Mapping[str, object] | None = None,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[np.ndarray, dict]:
        """Encode a (B, T) id batch to (B, T, d_model) final hidden states."""
        cfg = self.config
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2:
            raise ParameterError(f"token batch must be 2-D, got shape {tokens.shape}")
        B, T = tokens.shape
        if T > cfg.max_len:
            raise ParameterError(f"sequence length {T} exceeds encoder max_len {cfg.max_len}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
            raise DataError(
                f"token ids must lie in [0, {cfg.vocab_size}), got range "
                f"[{tokens.min()}, {tokens.max()}]"
            )
        if pad_mask is None:
            pad_mask = tokens == PAD_ID
        pad_mask = np.asarray(pad_mask, dtype=bool)

        h = self.params["tok_emb"][tokens] + self.params["pos_emb"][:T]
        # Padded columns are invisible to every query.
        col_bias = np.where(pad_mask, _MASK_NEG, 0.0)[:, None, None, :]

        H, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
        inv_sqrt = 1.0 / math.sqrt(dh)
        cache = {"tokens": tokens, "pad_mask": pad_mask, "layers": [], "shape": (B, T)}

        for i in range(cfg.n_layers):
            p = f"layers.{i}"
            layer: dict = {"x": h, "proj": {}}
            a_in, layer["ln1"] = _layer_norm(
                h, self.params[p + ".ln1.gamma"], self.params[p + ".ln1.beta"]
            )
            layer["a_in"] = a_in
            q = self._project(p + ".q_proj", a_in, adapters, train, rng, layer["proj"])
            k = self._project(p + ".k_proj", a_in, adapters, train, rng, layer["proj"])
            v = self._project(p + ".v_proj", a_in, adapters, train, rng, layer["proj"])
            q = q.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
            k = k.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
            v = v.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
            scores = q @ k.transpose(0, 1, 3, 2) * inv_sqrt + col_bias
            scores -= scores.max(axis=-1, keepdims=True)
            e = np.exp(scores)
            attn = e / e.sum(axis=-1, keepdims=True)
            ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(B, T, cfg.d_model)
            layer.update({"q": q, "k": k, "v": v, "attn": attn, "ctx": ctx})
            attn_out = self._project(p + ".out_proj", ctx, adapters, train, rng, layer["proj"])
            h = h + attn_out

            layer["x2"] = h
            f_in, layer["ln2"] = _layer_norm(
                h, self.params[p + ".ln2.gamma"], self.params[p + ".ln2.beta"]
            )
            u = f_in @ self.params[p + ".ff1.weight"] + self.params[p + ".ff1.bias"]
            g = _gelu(u)
            h = h + g @ self.params[p + ".ff2.weight"] + self.params[p + ".ff2.bias"]
            layer.update({"f_in": f_in, "u": u, "g": g})
            cache["layers"].append(layer)

        out, cache["ln_f"] = _layer_norm(h, self.params["ln_f.gamma"], self.params["ln_f.beta"])
        return out, cache

    # ------------------------------------------------------------ backward

    def _project_backward(self, proj_cache, dy, grads: EncoderGrads):
        name = proj_cache["name"]
        W = self.params[name + ".weight"]
        x = proj_cache["x"]
        dW = np.einsum("bti,bto->io", x, dy)
        grads.weight_grads[name] = grads.weight_grads.get(name, 0.0) + dW
        dx = dy @ W.T
        adapter = proj_cache["adapter"]
        if adapter is not None:
            dmid = (dy @ adapter.b.T) * adapter.scale
            da = np.einsum("bti,btr->ir", proj_cache["x_a"], dmid)
            db = np.einsum("btr,bto->ro", proj_cache["mid"], dy) * adapter.scale
            if name in grads.adapter_grads:
                pa, pb = grads.adapter_grads[name]
                grads.adapter_grads[name] = (pa + da, pb + db)
            else:
                grads.adapter_grads[name] = (da, db)
            dx_a = dmid @ adapter.a.T
            if proj_cache["drop_scale"] is not None:
                dx_a = dx_a * proj_cache["drop_scale"]
            dx = dx + dx_a
        return dx

    def backward_batch(self, cache: dict, d_out: np.ndarray) -> EncoderGrads:
        """Reverse pass from d(final hidden states) to adapter/weight grads."""
        cfg = self.config
        B, T = cache["shape"]
        H, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
        inv_sqrt = 1.0 / math.sqrt(dh)
        grads = EncoderGrads()

        dh_state = _layer_norm_backward(np.asarray(d_out, dtype=np.float64), cache["ln_f"])
        for i in reversed(range(cfg.n_layers)):
            p = f"layers.{i}"
            layer = cache["layers"][i]

            # feed-forward block: h = x2 + gelu(f_in@W1+b1)@W2+b2
            dg = dh_state @ self.params[p + ".ff2.weight"].T
            du = dg * _gelu_grad(layer["u"])
            df_in = du @ self.params[p + ".ff1.weight"].T
            dx2 = dh_state + _layer_norm_backward(df_in, layer["ln2"])

            # attention block: x2 = x + out_proj(ctx)
            dctx = self._project_backward(layer["proj"][p + ".out_proj"], dx2, grads)
            dctx = dctx.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
            attn, v, q, k = layer["attn"], layer["v"], layer["q"], layer["k"]
            dattn = dctx @ v.transpose(0, 1, 3, 2)
            dv = attn.transpose(0, 1, 3, 2) @ dctx
            ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
            dq = ds @ k * inv_sqrt
            dk = ds.transpose(0, 1, 3, 2) @ q * inv_sqrt

            def _flat(z):
                return z.transpose(0, 2, 1, 3).reshape(B, T, cfg.d_model)

            da_in = self._project_backward(layer["proj"][p + ".q_proj"], _flat(dq), grads)
            da_in += self._project_backward(layer["proj"][p + ".k_proj"], _flat(dk), grads)
            da_in += self._project_backward(layer["proj"][p + ".v_proj"], _flat(dv), grads)
            dh_state = dx2 + _layer_norm_backward(da_in, layer["ln1"])
        return grads


def init_encoder(config: ToyEncoderConfig, seed: int | None = None) -> ToyEncoder:
    """Draw all weights from the counter-based generator in a fixed order."""
    if seed is not None:
        config = ToyEncoderConfig(**{**config.to_meta(), "seed": seed})
    rng = make_rng(config.seed)
    d, dff = config.d_model, config.d_ff
    bound = 1.0 / math.sqrt(d)

    def draw(*shape):
        return rng.uniform(-bound, bound, size=shape)

    params: dict[str, np.ndarray] = {
        "tok_emb": draw(config.vocab_size, d),
        "pos_emb": draw(config.max_len, d),
    }
    for i in range(config.n_layers):
        p = f"layers.{i}"
        for kind in PROJECTION_KINDS:
            params[f"{p}.{kind}.weight"] = draw(d, d)
        params[p + ".ff1.weight"] = draw(d, dff)
        params[p + ".ff1.bias"] = np.zeros(dff)
        params[p + ".ff2.weight"] = draw(dff, d)
        params[p + ".ff2.bias"] = np.zeros(d)
        for ln in ("ln1", "ln2"):
            params[f"{p}.{ln}.gamma"] = np.ones(d)
            params[f"{p}.{ln}.beta"] = np.zeros(d)
    params["ln_f.gamma"] = np.ones(d)
    params["ln_f.beta"] = np.zeros(d)
    return ToyEncoder(config, params)


def encode(encoder: ToyEncoder, seq: TokenSequence) -> np.ndarray:
    """Token embeddings for one sequence as a (T, d_model) float64 matrix."""
    if len(seq) == 0:
        return np.zeros((0, encoder.config.d_model))
    out, _ = encoder.forward_batch(seq.tokens[None, :])
    return out[0]


def effective_rule(encoder: ToyEncoder, rule: PrepRule) -> PrepRule:
    """Cap a family's sequence budget at what the encoder can hold."""
    if rule.max_len <= encoder.config.max_len:
        return rule
    return PrepRule(rule.family, encoder.config.max_len, rule.specials, rule.representation)


def embed_cell(encoder: ToyEncoder, profile: CellProfile, descriptor: AdapterDescriptor) -> np.ndarray:
    """prep -> encode -> pool for one cell."""
    from .registry import prep_rule_for

    # padded layouts still emit specials for an empty profile, so gate on
    # the expression itself rather than the sequence length
    if not profile.expression:
        raise EmptyPoolError(f"cell {profile.cell_id!r} has no expressed genes to embed")
    rule = effective_rule(encoder, prep_rule_for(descriptor.model_id))
    seq = prep_rank_sequence(profile, rule)
    E = encode(encoder, seq)
    return pool(E, descriptor.pooling, SpecialPositions.from_sequence(seq))


def sequence_batch(
    sequences: list[TokenSequence], pad_to: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length sequences into (B, T) ids plus a pad mask."""
    if not sequences:
        raise ParameterError("cannot batch zero sequences")
    T = pad_to if pad_to is not None else max(len(s) for s in sequences)
    T = max(T, 1)
    tokens = np.full((len(sequences), T), PAD_ID, dtype=np.int64)
    for i, seq in enumerate(sequences):
        tokens[i, : len(seq)] = seq.tokens
    return tokens, tokens == PAD_ID


def embed_dataset(
    encoder: ToyEncoder,
    dataset: Dataset,
    descriptor: AdapterDescriptor,
    strategy: str = "frozen",
    adapters: Mapping[str, object] | None = None,
    batch_size: int = 64,
) -> EmbeddingMatrix:
    """Embed every cell; rows keep dataset order, values exported as float32."""
    from .registry import prep_rule_for

    rule = effective_rule(encoder, prep_rule_for(descriptor.model_id))
    dim = pooled_dim(descriptor.pooling, encoder.config.d_model)
    rows = np.zeros((len(dataset), dim), dtype=np.float64)
    for lo in range(0, len(dataset), batch_size):
        chunk = dataset.cells[lo : lo + batch_size]
        for c in chunk:
            if not c.expression:
                raise EmptyPoolError(f"cell {c.cell_id!r} has no expressed genes to embed")
        seqs = [prep_rank_sequence(c, rule) for c in chunk]
        tokens, pad = sequence_batch(seqs)
        out, _ = encoder.forward_batch(tokens, pad, adapters=adapters)
        for j, seq in enumerate(seqs):
            specials = SpecialPositions.from_sequence(seq)
            specials.pad_mask = pad[j]
            rows[lo + j] = pool(out[j], descriptor.pooling, specials)
    return EmbeddingMatrix(
        model_id=descriptor.model_id,
        strategy=strategy,
        pooling=descriptor.pooling,
        cell_ids=dataset.cell_ids,
        data=rows.astype(np.float32),
    )


def save_encoder(encoder: ToyEncoder, path) -> None:
    binio.save_arrays(path, "toy_encoder", encoder.params, meta=encoder.config.to_meta())


def load_encoder(path) -> ToyEncoder:
    kind, arrays, meta = binio.load_arrays(path)
    if kind != "toy_encoder":
        raise DataError(f"expected a toy_encoder sidecar, found kind {kind!r}")
    return ToyEncoder(ToyEncoderConfig(**meta), arrays)
