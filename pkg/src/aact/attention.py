"""Encoder-only transformer backbone shared by every feature module.

Recognition mode keeps the sequence length. Translation mode appends learned
query tokens after the (position-encoded) input, attends over the joint
sequence, and reads the outputs back at the query positions; this is how a
module maps M observed frames to N future frames and back.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .rng import Xoshiro256
from .tensor import ShapeError, Tensor


@dataclass
class EncoderLayer:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor

    def tensors(self) -> list[Tensor]:
        return [getattr(self, f) for f in self.__dataclass_fields__]


@dataclass
class EncoderParams:
    d: int
    num_heads: int = 8
    ffn_hidden: int | None = None
    layers: list[EncoderLayer] = field(default_factory=list)
    query_tokens: Tensor | None = None
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.ffn_hidden is None:
            self.ffn_hidden = self.d // 2
        if self.d % self.num_heads:
            raise ShapeError(f"model dim {self.d} not divisible by {self.num_heads} heads")

    @property
    def out_len(self) -> int | None:
        return None if self.query_tokens is None else self.query_tokens.shape[0]

    def tensors(self) -> list[Tensor]:
        out = [t for layer in self.layers for t in layer.tensors()]
        if self.query_tokens is not None:
            out.append(self.query_tokens)
        return out


def init_encoder(
    rng: Xoshiro256,
    prefix: str,
    d: int,
    num_heads: int = 8,
    num_layers: int = 2,
    ffn_hidden: int | None = None,
    out_len: int | None = None,
) -> EncoderParams:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) weights, zero biases, unit LayerNorm gains."""
    if d % num_heads:
        raise ShapeError(f"model dim {d} not divisible by {num_heads} heads")
    h = d // 2 if ffn_hidden is None else ffn_hidden
    a = 1.0 / math.sqrt(d)

    def w(name, shape):
        return T.parameter(rng.uniform_array(shape, -a, a), f"{prefix}.{name}")

    def const(name, shape, v):
        return T.parameter(np.full(shape, v), f"{prefix}.{name}")

    layers = []
    for i in range(num_layers):
        p = f"layer{i}"
        layers.append(
            EncoderLayer(
                wq=w(f"{p}.wq", (d, d)),
                wk=w(f"{p}.wk", (d, d)),
                wv=w(f"{p}.wv", (d, d)),
                wo=w(f"{p}.wo", (d, d)),
                w1=w(f"{p}.w1", (d, h)),
                b1=const(f"{p}.b1", (h,), 0.0),
                w2=w(f"{p}.w2", (h, d)),
                b2=const(f"{p}.b2", (d,), 0.0),
                ln1_g=const(f"{p}.ln1_g", (d,), 1.0),
                ln1_b=const(f"{p}.ln1_b", (d,), 0.0),
                ln2_g=const(f"{p}.ln2_g", (d,), 1.0),
                ln2_b=const(f"{p}.ln2_b", (d,), 0.0),
            )
        )
    queries = w("query_tokens", (out_len, d)) if out_len is not None else None
    return EncoderParams(d=d, num_heads=num_heads, ffn_hidden=h, layers=layers, query_tokens=queries)


_PE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def positional_encoding(length: int, d: int) -> np.ndarray:
    """Sinusoidal table: sin(pos / 10000^(2i/d)) at 2i, cos at 2i+1."""
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    if d < 2 or d % 2:
        raise ValueError(f"positional encoding needs an even d >= 2, got {d}")
    key = (length, d)
    if key not in _PE_CACHE:
        pos = np.arange(length, dtype=np.float64)[:, None]
        rate = np.power(10000.0, np.arange(0, d, 2, dtype=np.float64) / d)
        pe = np.empty((length, d))
        pe[:, 0::2] = np.sin(pos / rate)
        pe[:, 1::2] = np.cos(pos / rate)
        pe.flags.writeable = False
        _PE_CACHE[key] = pe
    return _PE_CACHE[key]


def _attend(q: Tensor, k: Tensor) -> Tensor:
    scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    return T.softmax(scores, axis=-1)


def attention_weights(x: Tensor, layer: EncoderLayer, num_heads: int) -> Tensor:
    """Per-head attention matrices, shape (..., heads, T, T)."""
    q, k, _ = _project_heads(x, layer, num_heads)
    return _attend(q, k)


def _project_heads(x: Tensor, layer: EncoderLayer, num_heads: int):
    *lead, t, d = x.shape
    if d % num_heads:
        raise ShapeError(f"model dim {d} not divisible by {num_heads} heads")
    dh = d // num_heads

    def split(w):
        y = T.matmul(x, w).reshape(*lead, t, num_heads, dh)
        return T.swapaxes(y, -2, -3)

    return split(layer.wq), split(layer.wk), split(layer.wv)


def multi_head_self_attention(x: Tensor, layer: EncoderLayer, num_heads: int) -> Tensor:
    *lead, t, d = x.shape
    q, k, v = _project_heads(x, layer, num_heads)
    heads = T.matmul(_attend(q, k), v)  # (..., h, T, dh)
    merged = T.swapaxes(heads, -2, -3).reshape(*lead, t, d)
    return T.matmul(merged, layer.wo)


def encoder_block(x: Tensor, layer: EncoderLayer, num_heads: int, eps: float) -> Tensor:
    h = T.layer_norm(x + multi_head_self_attention(x, layer, num_heads), layer.ln1_g, layer.ln1_b, eps)
    ff = T.matmul(T.relu(T.matmul(h, layer.w1) + layer.b1), layer.w2) + layer.b2
    return T.layer_norm(h + ff, layer.ln2_g, layer.ln2_b, eps)


def encoder_forward(x: Tensor, params: EncoderParams, out_len: int | None = None) -> Tensor:
    """Run the encoder on ``x`` of shape (..., T_in, d).

    With ``out_len`` equal to T_in (or None) and no query tokens this is the
    recognition mode; otherwise the params must carry exactly ``out_len``
    query tokens and the result has shape (..., out_len, d).
    """
    x = T.as_tensor(x)
    *lead, t_in, d = x.shape
    if d != params.d:
        raise ShapeError(f"input feature dim {d} != encoder dim {params.d}")
    h = x + positional_encoding(t_in, d)
    translating = params.query_tokens is not None
    if translating:
        if out_len is not None and out_len != params.out_len:
            raise ShapeError(f"encoder has {params.out_len} query tokens, asked for {out_len}")
        q = params.query_tokens
        if lead:
            q = T.broadcast_to(q, (*lead, *q.shape))
        h = T.concat([h, q], axis=-2)
    elif out_len is not None and out_len != t_in:
        raise ShapeError(f"translation to length {out_len} needs query tokens (input length {t_in})")
    for layer in params.layers:
        h = encoder_block(h, layer, params.num_heads, params.ln_eps)
    if translating:
        h = h[..., t_in:, :]
    return h
