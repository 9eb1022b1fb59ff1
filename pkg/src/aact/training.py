"""Seeded mini-batch Adam training and the checkpoint file format.

Checkpoint layout (little-endian)::

    7s  magic b"AACTCP1"
    B   version (1)
    I   byte length of the config echo, then that many bytes of UTF-8 JSON
    I   tensor count
    per tensor:
        I  name length, then UTF-8 name
        I  ndim, then ndim x I extents
        f8[prod(extents)] values, row-major
"""
from __future__ import annotations

import dataclasses
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import AnticipationSet, Geometry
from .losses import LossBreakdown, composed_losses
from .models import KINDS, ModelParams, anticipation, forward, init_model
from .rng import Xoshiro256

log = logging.getLogger(__name__)

CKPT_MAGIC = b"AACTCP1"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


class GradientCheckError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    model_kind: str = "act"
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_s: float = 0.1
    lambda_p: float = 1.0
    lambda_c: float = 0.3
    seed: int = 0
    cycle_label_target: str = "soft"
    d: int = 16
    A: int = 12
    M: int = 8
    N: int = 4
    k: int = 4
    heads: int = 8
    layers: int = 2
    # subset of losses.TERMS; None keeps every term of the model kind
    terms: tuple[str, ...] | None = None
    gradcheck: bool = True
    gradcheck_coords: int = 24
    gradcheck_tol: float = 1e-4
    log_steps: bool = False

    def __post_init__(self):
        if self.model_kind not in KINDS:
            raise ValueError(f"model_kind must be one of {KINDS}, got {self.model_kind!r}")
        for name in ("learning_rate", "adam_eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"adam betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        for name in ("lambda_s", "lambda_p", "lambda_c"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError(f"bad epochs/batch_size ({self.epochs}, {self.batch_size})")
        if self.cycle_label_target not in ("soft", "hard"):
            raise ValueError(f"cycle_label_target must be soft or hard, got {self.cycle_label_target!r}")
        if self.terms is not None:
            self.terms = tuple(self.terms)

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.d, self.A, self.M, self.N, self.k)

    @property
    def lambdas(self) -> tuple[float, float, float]:
        return (self.lambda_s, self.lambda_p, self.lambda_c)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        if out["terms"] is not None:
            out["terms"] = list(out["terms"])
        return out

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    loss: LossBreakdown
    train_top1: float
    val_top1: float | None


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    steps: list[LossBreakdown] = field(default_factory=list)
    max_gradcheck_error: float | None = None

    def __len__(self) -> int:
        return len(self.epochs)


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, T.Tensor],
    grads: T.GradientMap,
    state: AdamState,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update, applied in place to ``params``.

    Parameters absent from ``grads`` are left untouched (their moments do
    not decay either).
    """
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, g in grads.items():
        p = params.get(name)
        if p is None:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != p.shape:
            raise T.ShapeError(f"gradient for {name} has shape {g.shape}, parameter is {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def batch_loss(params: ModelParams, cfg: TrainConfig, ds: AnticipationSet, idx, frozen_target=None):
    out = forward(ds.x_o[idx], params)
    total, br = composed_losses(
        out,
        params.kind,
        ds.x_o[idx],
        ds.x_f[idx],
        ds.a_o[idx],
        ds.a_f[idx],
        cfg.lambdas,
        cfg.terms,
        cfg.cycle_label_target,
        frozen_target,
    )
    return total, br, out


def gradient_check(
    params: ModelParams,
    cfg: TrainConfig,
    ds: AnticipationSet,
    idx,
    n_coords: int | None,
    rng,
    kinks: list | None = None,
) -> float:
    """Max relative error between backward and central differences on one batch.

    ``n_coords`` None checks every coordinate; otherwise a seeded sample of
    coordinates spread over all parameter tensors. Coordinates whose
    perturbation crosses a relu kink are skipped and listed in ``kinks``.
    """
    kinks = [] if kinks is None else kinks
    named = params.named_tensors()
    total, _, out = batch_loss(params, cfg, ds, idx)
    analytic = T.backward(total)
    target = None if out.a_f_p is None else out.a_f_p.data.copy()
    coords = None
    if n_coords is not None:
        names = sorted(named)
        coords = {}
        for _ in range(n_coords):
            name = names[rng.randint(0, len(names) - 1)]
            coords.setdefault(name, []).append(rng.randint(0, named[name].data.size - 1))

    def f():
        return batch_loss(params, cfg, ds, idx, target)[0].item()

    tensors = [named[n] for n in sorted(named) if coords is None or n in coords]
    numeric = T.finite_diff_grad(f, tensors, 1e-4, coords, kinks)
    return T.max_relative_error(analytic, numeric, {n: t.shape for n, t in named.items()})


def _check_geometry(cfg: TrainConfig, ds: AnticipationSet, what: str):
    g = ds.geometry
    want = cfg.geometry
    if (g.d, g.A, g.M, g.N) != (want.d, want.A, want.M, want.N):
        raise ValueError(f"{what} geometry {g} does not match config {want}")


def predict(params: ModelParams, x_o: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Anticipated future-action distributions, shape (n, A)."""
    out = []
    with T.no_grad():
        for s in range(0, len(x_o), batch_size):
            o = forward(x_o[s : s + batch_size], params)
            out.append(anticipation(o, params.kind).data)
    return np.concatenate(out) if out else np.zeros((0, params.num_classes))


def _top1(probs: np.ndarray, labels: np.ndarray) -> float:
    return float((probs.argmax(axis=-1) == labels).mean()) if len(labels) else 0.0


def _mean_breakdown(items: list[tuple[LossBreakdown, int]]) -> LossBreakdown:
    n = sum(w for _, w in items)
    keys = ("l_s", "l_p", "l_cyc_p", "l_cyc_s", "l_c", "total")
    vals = {k: sum(getattr(b, k) * w for b, w in items) / n for k in keys}
    first = items[0][0]
    return LossBreakdown(**vals, lambda_s=first.lambda_s, lambda_p=first.lambda_p, lambda_c=first.lambda_c)


def train(
    cfg: TrainConfig,
    train_set: AnticipationSet,
    val_set: AnticipationSet | None = None,
) -> tuple[ModelParams, TrainHistory]:
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    _check_geometry(cfg, train_set, "training set")
    if val_set is not None:
        _check_geometry(cfg, val_set, "validation set")
    params = init_model(cfg.model_kind, cfg.d, cfg.A, cfg.M, cfg.N, cfg.seed, cfg.heads, cfg.layers)
    named = params.named_tensors()
    state = AdamState()
    history = TrainHistory()
    shuffle_rng = Xoshiro256(cfg.seed ^ 0xA5A5A5A5)
    n = len(train_set)

    if cfg.gradcheck and cfg.epochs > 0:
        gc_rng = Xoshiro256(cfg.seed ^ 0x6C6C6C6C)
        idx = sorted({gc_rng.randint(0, n - 1) for _ in range(min(4, n))})
        err = gradient_check(params, cfg, train_set, idx, cfg.gradcheck_coords, gc_rng)
        history.max_gradcheck_error = err
        if err > cfg.gradcheck_tol:
            raise GradientCheckError(f"gradient check failed: max relative error {err:.3e} > {cfg.gradcheck_tol}")

    for epoch in range(cfg.epochs):
        order = np.array(shuffle_rng.permutation(n))
        records = []
        correct = 0
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            total, br, out = batch_loss(params, cfg, train_set, idx)
            br.check()
            if cfg.log_steps:
                history.steps.append(br)
            correct += int((anticipation(out, params.kind).data.argmax(-1) == train_set.a_f[idx]).sum())
            grads = T.backward(total)
            adam_step(named, grads, state, cfg.learning_rate, (cfg.beta1, cfg.beta2), cfg.adam_eps)
            records.append((br, len(idx)))
        val_top1 = None
        if val_set is not None and len(val_set):
            val_top1 = _top1(predict(params, val_set.x_o), val_set.a_f)
        rec = EpochRecord(epoch, _mean_breakdown(records), correct / n, val_top1)
        history.epochs.append(rec)
        log.info(
            "%s epoch %d loss %.4f train@1 %.3f val@1 %s",
            cfg.model_kind,
            epoch,
            rec.loss.total,
            rec.train_top1,
            "n/a" if val_top1 is None else f"{val_top1:.3f}",
        )
    return params, history


def write_history_csv(history: TrainHistory, path) -> None:
    cols = ["epoch", "l_s", "l_p", "l_cyc_p", "l_cyc_s", "l_c", "total", "train_top1", "val_top1"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in history.epochs:
            b = r.loss
            row = [r.epoch, b.l_s, b.l_p, b.l_cyc_p, b.l_cyc_s, b.l_c, b.total, r.train_top1, r.val_top1]
            fh.write(",".join("" if v is None else repr(v) for v in row) + "\n")


# ---------------------------------------------------------------- checkpoints


def checkpoint_save(params: ModelParams, path, cfg: TrainConfig) -> None:
    echo = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    named = params.named_tensors()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<B", CKPT_VERSION))
        fh.write(struct.pack("<I", len(echo)) + echo)
        fh.write(struct.pack("<I", len(named)))
        for name in sorted(named):
            t = named[name]
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)) + nb)
            fh.write(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
            fh.write(t.data.astype("<f8").tobytes())


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated while reading {what}")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def checkpoint_load(path, expect: TrainConfig | None = None) -> tuple[ModelParams, TrainConfig]:
    """Rebuild a model from a checkpoint; ``expect`` pins kind and geometry."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    magic = r.take(7, "magic")
    if magic != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    (version,) = struct.unpack("<B", r.take(1, "version"))
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    echo = json.loads(r.take(r.u32("config length"), "config echo").decode())
    cfg = TrainConfig.from_dict(echo)
    if expect is not None:
        for key in ("model_kind", "d", "A", "M", "N", "heads", "layers"):
            if getattr(expect, key) != getattr(cfg, key):
                raise CheckpointError(
                    f"{path}: checkpoint {key}={getattr(cfg, key)!r} but requested {key}={getattr(expect, key)!r}"
                )
    params = init_model(cfg.model_kind, cfg.d, cfg.A, cfg.M, cfg.N, cfg.seed, cfg.heads, cfg.layers)
    named = params.named_tensors()
    count = r.u32("tensor count")
    seen = set()
    for i in range(count):
        nlen = r.u32(f"name length of tensor #{i}")
        name = r.take(nlen, f"name of tensor #{i}").decode()
        ndim = r.u32(f"{name} rank")
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"{name} shape"))
        if name not in named:
            raise CheckpointError(f"{path}: unexpected tensor {name}")
        if tuple(shape) != named[name].shape:
            raise CheckpointError(f"{path}: tensor {name} has shape {shape}, model expects {named[name].shape}")
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(8 * size, f"tensor {name}"), dtype="<f8").reshape(shape)
        named[name].data[...] = data
        seen.add(name)
    missing = sorted(set(named) - seen)
    if missing:
        raise CheckpointError(f"{path}: missing tensor {missing[0]}" + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
    if r.pos != len(r.raw):
        raise CheckpointError(f"{path}: {len(r.raw) - r.pos} trailing bytes")
    return params, cfg
