"""Semantic-experience (SE), pattern-visualization (PV) and cycle (ACT) models.

SE:  X_o -> G_o -> pooled head -> a_o_hat -> E -> a_f_s
PV:  X_o -> G_t -> X_f_hat -> V -> a_f_p
ACT: X_o -> G_a -> X_f_hat -> V_a -> a_f_p
                   X_f_hat -> G_r -> X_o_hat -> V_r -> a_o_hat -> E -> a_f_s

All forward functions accept a single example (M, d) or a batch (B, M, d).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import EncoderParams, encoder_forward, init_encoder
from .rng import Xoshiro256
from .tensor import ShapeError, Tensor

KINDS = ("se", "pv", "act")


@dataclass
class ClassifierParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    mode: str = "pooled"

    def tensors(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    @property
    def num_classes(self) -> int:
        return self.w2.shape[1]


@dataclass
class ExperienceParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class ModelParams:
    kind: str
    d: int
    num_classes: int
    obs_len: int
    fut_len: int
    encoders: dict[str, EncoderParams] = field(default_factory=dict)
    classifiers: dict[str, ClassifierParams] = field(default_factory=dict)
    experience: ExperienceParams | None = None

    def named_tensors(self) -> dict[str, Tensor]:
        out = {}
        for group in (self.encoders, self.classifiers):
            for p in group.values():
                for t in p.tensors():
                    out[t.name] = t
        if self.experience is not None:
            for t in self.experience.tensors():
                out[t.name] = t
        return out

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.named_tensors().values())


@dataclass
class Outputs:
    """Forward results; fields a model kind does not produce stay None."""

    x_f_hat: Tensor | None = None
    a_f_p: Tensor | None = None
    x_o_hat: Tensor | None = None
    a_o_hat: Tensor | None = None
    a_f_s: Tensor | None = None


ActOutputs = Outputs


def _mlp_weights(rng: Xoshiro256, prefix: str, n_in: int, n_hidden: int, n_out: int):
    a1, a2 = 1.0 / math.sqrt(n_in), 1.0 / math.sqrt(n_hidden)
    return (
        T.parameter(rng.uniform_array((n_in, n_hidden), -a1, a1), f"{prefix}.w1"),
        T.parameter(np.zeros(n_hidden), f"{prefix}.b1"),
        T.parameter(rng.uniform_array((n_hidden, n_out), -a2, a2), f"{prefix}.w2"),
        T.parameter(np.zeros(n_out), f"{prefix}.b2"),
    )


def init_classifier(rng: Xoshiro256, prefix: str, d: int, num_classes: int, mode: str = "pooled"):
    return ClassifierParams(*_mlp_weights(rng, prefix, d, d, num_classes), mode=mode)


def init_experience(rng: Xoshiro256, prefix: str, num_classes: int):
    return ExperienceParams(*_mlp_weights(rng, prefix, num_classes, num_classes, num_classes))


def init_model(
    kind: str,
    d: int,
    num_classes: int,
    obs_len: int,
    fut_len: int,
    seed: int,
    num_heads: int = 8,
    num_layers: int = 2,
) -> ModelParams:
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    rng = Xoshiro256(seed)
    mp = ModelParams(kind=kind, d=d, num_classes=num_classes, obs_len=obs_len, fut_len=fut_len)
    enc = dict(num_heads=num_heads, num_layers=num_layers)
    if kind == "se":
        mp.encoders["G_o"] = init_encoder(rng, "G_o", d, **enc)
        mp.classifiers["G_o_head"] = init_classifier(rng, "G_o_head", d, num_classes)
        mp.experience = init_experience(rng, "E", num_classes)
    elif kind == "pv":
        mp.encoders["G_t"] = init_encoder(rng, "G_t", d, out_len=fut_len, **enc)
        mp.classifiers["V"] = init_classifier(rng, "V", d, num_classes)
    else:
        mp.encoders["G_a"] = init_encoder(rng, "G_a", d, out_len=fut_len, **enc)
        mp.classifiers["V_a"] = init_classifier(rng, "V_a", d, num_classes)
        mp.encoders["G_r"] = init_encoder(rng, "G_r", d, out_len=obs_len, **enc)
        mp.classifiers["V_r"] = init_classifier(rng, "V_r", d, num_classes)
        mp.experience = init_experience(rng, "E", num_classes)
    return mp


def classify(features: Tensor, params: ClassifierParams, mode: str | None = None) -> Tensor:
    """Two-layer ReLU MLP + softmax.

    pooled: mean over the frame axis first, one distribution per sequence.
    dense:  one distribution per frame.
    """
    features = T.as_tensor(features)
    mode = mode or params.mode
    if features.ndim < 2 or features.shape[-2] == 0:
        raise ShapeError(f"classify needs a non-empty (T, d) sequence, got shape {features.shape}")
    if mode == "pooled":
        h = T.mean(features, axis=-2)
    elif mode == "dense":
        h = features
    else:
        raise ValueError(f"unknown classifier mode {mode!r}")
    h = T.relu(_logits(h, params.w1, params.b1))
    return T.softmax(_logits(h, params.w2, params.b2), axis=-1)


def _logits(h: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if h.ndim == 1:
        return T.matmul(h.reshape(1, h.shape[0]), w).reshape(w.shape[1]) + b
    return T.matmul(h, w) + b


def experience_anticipate(a_o_hat: Tensor, params: ExperienceParams) -> Tensor:
    """Map a (soft) observed-action distribution to a future-action distribution."""
    a_o_hat = T.as_tensor(a_o_hat)
    n = params.w1.shape[0]
    if a_o_hat.shape[-1] != n:
        raise ShapeError(f"experience layer expects length-{n} distributions, got shape {a_o_hat.shape}")
    h = T.relu(_logits(a_o_hat, params.w1, params.b1))
    return T.softmax(_logits(h, params.w2, params.b2), axis=-1)


def _check_obs(x_o: Tensor, params: ModelParams, kind: str) -> Tensor:
    if params.kind != kind:
        raise ValueError(f"{kind}_forward called with {params.kind} params")
    x_o = T.as_tensor(x_o)
    if x_o.shape[-2:] != (params.obs_len, params.d):
        raise ShapeError(f"observed window shape {x_o.shape[-2:]} != ({params.obs_len}, {params.d})")
    return x_o


def se_forward(x_o, params: ModelParams) -> Outputs:
    x_o = _check_obs(x_o, params, "se")
    h = encoder_forward(x_o, params.encoders["G_o"], params.obs_len)
    a_o_hat = classify(h, params.classifiers["G_o_head"], "pooled")
    return Outputs(a_o_hat=a_o_hat, a_f_s=experience_anticipate(a_o_hat, params.experience))


def pv_forward(x_o, params: ModelParams, fut_len: int | None = None) -> Outputs:
    x_o = _check_obs(x_o, params, "pv")
    x_f_hat = encoder_forward(x_o, params.encoders["G_t"], fut_len or params.fut_len)
    return Outputs(x_f_hat=x_f_hat, a_f_p=classify(x_f_hat, params.classifiers["V"], "pooled"))


def act_forward(x_o, params: ModelParams, fut_len: int | None = None) -> Outputs:
    x_o = _check_obs(x_o, params, "act")
    x_f_hat = encoder_forward(x_o, params.encoders["G_a"], fut_len or params.fut_len)
    a_f_p = classify(x_f_hat, params.classifiers["V_a"], "pooled")
    x_o_hat = encoder_forward(x_f_hat, params.encoders["G_r"], params.obs_len)
    a_o_hat = classify(x_o_hat, params.classifiers["V_r"], "pooled")
    a_f_s = experience_anticipate(a_o_hat, params.experience)
    return Outputs(x_f_hat=x_f_hat, a_f_p=a_f_p, x_o_hat=x_o_hat, a_o_hat=a_o_hat, a_f_s=a_f_s)


_FORWARD = {"se": se_forward, "pv": pv_forward, "act": act_forward}


def forward(x_o, params: ModelParams) -> Outputs:
    return _FORWARD[params.kind](x_o, params)


def anticipation(outputs: Outputs, kind: str) -> Tensor:
    """The future-action distribution a model kind is scored on."""
    return outputs.a_f_s if kind == "se" else outputs.a_f_p


def dense_future(x_o, params: ModelParams) -> Tensor:
    """Per-frame future label distributions, shape (..., N, A).

    PV/ACT classify each synthesized future frame; SE has no future features,
    so its single anticipated distribution is repeated over the N frames.
    """
    out = forward(x_o, params)
    if params.kind == "se":
        a = out.a_f_s
        return T.broadcast_to(a.reshape(*a.shape[:-1], 1, a.shape[-1]), (*a.shape[:-1], params.fut_len, a.shape[-1]))
    head = params.classifiers["V" if params.kind == "pv" else "V_a"]
    return classify(out.x_f_hat, head, "dense")
