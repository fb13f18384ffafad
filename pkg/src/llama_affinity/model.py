"""Llama-style encoder with masked mean pooling and a dense classifier head."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .data import VocabularyError
from .tensor import Tensor


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 4
    num_query_heads: int = 12
    num_key_value_heads: int = 12
    hidden_dim: int = 384
    intermediate_dim: int = 192
    vocabulary_size: int = 30
    rope_max_wavelength: float = 100_000.0
    rope_scaling_factor: float = 1.0
    norm_epsilon: float = 1e-6
    dropout: float = 0.1
    max_seq_len: int = 256
    num_classes: int = 2
    causal_attention: bool = True

    def __post_init__(self):
        self.validate()

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_query_heads

    def validate(self):
        if min(self.num_layers, self.num_query_heads, self.num_key_value_heads, self.hidden_dim,
               self.intermediate_dim, self.vocabulary_size, self.num_classes, self.max_seq_len) < 1:
            raise ConfigError("all sizes must be positive")
        if self.hidden_dim % self.num_query_heads:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by num_query_heads {self.num_query_heads}")
        if self.head_dim % 2:
            raise ConfigError(f"head_dim {self.head_dim} must be even for rotary embeddings")
        if self.num_query_heads % self.num_key_value_heads:
            raise ConfigError("num_query_heads must be a multiple of num_key_value_heads")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        if self.norm_epsilon <= 0 or self.rope_max_wavelength <= 0 or self.rope_scaling_factor <= 0:
            raise ConfigError("norm_epsilon, rope_max_wavelength and rope_scaling_factor must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class ForwardOutput(NamedTuple):
    logits: Tensor
    hidden: Tensor | None = None


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every parameter, in canonical order."""
    h, i, d = config.hidden_dim, config.intermediate_dim, config.head_dim
    kv = config.num_key_value_heads * d
    shapes = {"embed": (config.vocabulary_size, h)}
    for n in range(config.num_layers):
        p = f"layers.{n}."
        shapes[p + "attn_norm"] = (h,)
        shapes[p + "wq"] = (h, h)
        shapes[p + "wk"] = (h, kv)
        shapes[p + "wv"] = (h, kv)
        shapes[p + "wo"] = (h, h)
        shapes[p + "mlp_norm"] = (h,)
        shapes[p + "w_gate"] = (h, i)
        shapes[p + "w_up"] = (h, i)
        shapes[p + "w_down"] = (i, h)
    shapes["final_norm"] = (h,)
    shapes["head.dense.w"] = (h, h)
    shapes["head.dense.b"] = (h,)
    shapes["head.out.w"] = (h, config.num_classes)
    shapes["head.out.b"] = (config.num_classes,)
    return shapes


def _truncated_normal(rng, shape, std, bound=2.0):
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


def init_params(config: ModelConfig, rng: np.random.Generator, dtype=np.float32,
                std: float = 0.02) -> dict[str, Tensor]:
    """Weights ~ N(0, std) truncated at two standard deviations; biases 0; norm gains 1."""
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith("norm"):
            arr = np.ones(shape)
        elif name.endswith(".b"):
            arr = np.zeros(shape)
        else:
            arr = _truncated_normal(rng, shape, std)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return params


def count_params(params: dict[str, Tensor]) -> int:
    return int(sum(p.data.size for p in params.values()))


def layer_params(params: dict[str, Tensor], n: int) -> dict[str, Tensor]:
    prefix = f"layers.{n}."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def rope_angles(config: ModelConfig, positions) -> np.ndarray:
    """Rotation angles [len(positions), head_dim / 2] in float64."""
    d = config.head_dim
    if d % 2:
        raise ConfigError("head_dim must be even")
    inv_freq = config.rope_max_wavelength ** (-2.0 * np.arange(d // 2) / d)
    pos = np.asarray(positions, dtype=np.float64) / config.rope_scaling_factor
    return np.outer(pos, inv_freq)


def apply_rope(x: Tensor, angles: np.ndarray) -> Tensor:
    return T.rope(x, np.cos(angles), np.sin(angles))


def attention_bias(mask, causal: bool, dtype=np.float32) -> np.ndarray:
    """Additive bias [B, 1, T, T]: large negative at padded keys and, if causal, future keys."""
    mask = np.asarray(mask)
    t = mask.shape[1]
    blocked = (mask[:, None, None, :] == 0)
    if causal:
        blocked = blocked | np.triu(np.ones((t, t), dtype=bool), k=1)[None, None]
    return np.where(blocked, T.MASK_NEG, 0.0).astype(dtype)


def _linear(x: Tensor, w: Tensor) -> Tensor:
    lead = x.shape[:-1]
    y = T.reshape(x, (-1, x.shape[-1])) @ w
    return T.reshape(y, (*lead, w.shape[-1]))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, _ = x.shape
    return T.transpose(T.reshape(x, (b, t, heads, -1)), (0, 2, 1, 3))


def attention_forward(x: Tensor, layer: dict[str, Tensor], mask, config: ModelConfig,
                      rng=None, training: bool = False, weights_out: list | None = None) -> Tensor:
    """Pre-norm rotary self-attention block with residual connection."""
    b, t, hdim = x.shape
    mask = np.asarray(mask)
    if mask.shape != (b, t):
        raise T.ShapeError(f"attention mask {mask.shape} does not match input {(b, t)}")
    nq, nkv, d = config.num_query_heads, config.num_key_value_heads, config.head_dim

    h = T.rms_norm(x, layer["attn_norm"], config.norm_epsilon)
    q = _split_heads(_linear(h, layer["wq"]), nq)
    k = _split_heads(_linear(h, layer["wk"]), nkv)
    v = _split_heads(_linear(h, layer["wv"]), nkv)

    angles = rope_angles(config, np.arange(t))
    q = apply_rope(q, angles)
    k = apply_rope(k, angles)
    k = T.repeat_heads(k, nq // nkv, axis=1)
    v = T.repeat_heads(v, nq // nkv, axis=1)

    scores = T.scale(q @ T.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(d))
    scores = scores + Tensor(attention_bias(mask, config.causal_attention, x.dtype))
    weights = T.softmax(scores)
    if weights_out is not None:
        weights_out.append(weights.data)
    weights = T.dropout(weights, config.dropout, rng, training)

    ctx = T.reshape(T.transpose(weights @ v, (0, 2, 1, 3)), (b, t, hdim))
    out = T.dropout(_linear(ctx, layer["wo"]), config.dropout, rng, training)
    return x + out


def mlp_forward(x: Tensor, layer: dict[str, Tensor], config: ModelConfig,
                rng=None, training: bool = False) -> Tensor:
    """Pre-norm gated SiLU feed-forward block with residual connection."""
    h = T.rms_norm(x, layer["mlp_norm"], config.norm_epsilon)
    gated = T.silu(_linear(h, layer["w_gate"])) * _linear(h, layer["w_up"])
    out = T.dropout(_linear(gated, layer["w_down"]), config.dropout, rng, training)
    return x + out


def forward(params: dict[str, Tensor], ids, mask, config: ModelConfig, rng=None,
            training: bool = False, return_hidden: bool = False) -> ForwardOutput:
    ids = np.asarray(ids)
    mask = np.asarray(mask)
    if ids.ndim != 2 or ids.shape != mask.shape:
        raise T.ShapeError(f"ids {ids.shape} and mask {mask.shape} must both be [B, T]")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocabulary_size):
        raise VocabularyError(f"token id out of range for vocabulary of size {config.vocabulary_size}")
    if training and config.dropout > 0 and rng is None:
        raise ValueError("training with dropout needs an rng")

    x = T.take_rows(params["embed"], ids)
    for n in range(config.num_layers):
        layer = layer_params(params, n)
        x = attention_forward(x, layer, mask, config, rng, training)
        x = mlp_forward(x, layer, config, rng, training)
    x = T.rms_norm(x, params["final_norm"], config.norm_epsilon)
    pooled = T.masked_mean(x, mask)
    z = T.relu(pooled @ params["head.dense.w"] + params["head.dense.b"])
    logits = z @ params["head.out.w"] + params["head.out.b"]
    return ForwardOutput(logits, x if return_hidden else None)


def predict_proba(logits) -> np.ndarray:
    """Class probabilities; column 1 is the binder probability."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
