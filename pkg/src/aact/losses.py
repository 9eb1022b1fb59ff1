"""Objectives for the three model kinds.

Term names used by ablations:

    recog_o  CE(a_o_hat, a_o)            \\ semantic-experience loss l_s
    exp_f    CE(a_f_s, a_f)              /
    feat_f   MSE(X_f_hat, X_f)           \\ pattern-visualization loss l_p
    antic_f  CE(a_f_p, a_f)              /
    cyc_p    MSE(X_o_hat, X_o)           \\ cycle loss l_c
    cyc_s    CE(a_f_s, stopgrad(a_f_p))  /
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .models import Outputs
from .tensor import ShapeError, Tensor

PROB_FLOOR = 1e-12
TERMS = ("recog_o", "exp_f", "feat_f", "antic_f", "cyc_p", "cyc_s")
KIND_TERMS = {
    "se": ("recog_o", "exp_f"),
    "pv": ("feat_f", "antic_f"),
    "act": TERMS,
}


@dataclass(frozen=True)
class LossBreakdown:
    l_s: float
    l_p: float
    l_cyc_p: float
    l_cyc_s: float
    l_c: float
    total: float
    lambda_s: float = 1.0
    lambda_p: float = 1.0
    lambda_c: float = 1.0

    def check(self) -> None:
        """Raise if the decomposition identities do not hold bit-for-bit."""
        if self.l_c != self.l_cyc_p + self.l_cyc_s:
            raise AssertionError(f"l_c {self.l_c!r} != l_cyc_p + l_cyc_s")
        expect = self.lambda_s * self.l_s + self.lambda_p * self.l_p + self.lambda_c * self.l_c
        if self.total != expect:
            raise AssertionError(f"total {self.total!r} != weighted sum {expect!r}")
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise AssertionError(f"{f.name} = {v!r} is not finite and >= 0")

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"class index out of range [0, {num_classes}): {labels.tolist()}")
    out = np.zeros(labels.shape + (num_classes,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def cross_entropy(pred: Tensor, target) -> Tensor:
    """Mean over leading axes of -sum_c target_c * ln(max(pred_c, 1e-12)).

    ``target`` is a class index (array of indices for a batch) or a
    distribution with the same shape as ``pred``.
    """
    pred = T.as_tensor(pred)
    a = pred.shape[-1]
    if isinstance(target, Tensor):
        tgt = target.data
    else:
        tgt = np.asarray(target)
        if tgt.dtype.kind in "iu":
            if tgt.shape != pred.shape[:-1]:
                raise ShapeError(f"labels shape {tgt.shape} does not match predictions {pred.shape}")
            tgt = one_hot(tgt, a)
    if tgt.shape != pred.shape:
        raise ShapeError(f"target shape {tgt.shape} != prediction shape {pred.shape}")
    logp = T.log(T.clamp_min(pred, PROB_FLOOR))
    per_row = T.sum_(T.mul(logp, tgt), axis=-1) * -1.0
    return T.mean(per_row)


def mse(a: Tensor, b) -> Tensor:
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    return T.mean(T.square(a - b))


def _zero() -> Tensor:
    return Tensor(0.0)


def composed_losses(
    outputs: Outputs,
    kind: str,
    x_o,
    x_f,
    a_o,
    a_f,
    lambdas: tuple[float, float, float] = (1.0, 1.0, 1.0),
    terms=None,
    cycle_label_target: str = "soft",
    frozen_target: np.ndarray | None = None,
) -> tuple[Tensor, LossBreakdown]:
    """Weighted objective for ``kind`` and its float breakdown.

    ``terms`` restricts which of :data:`TERMS` contribute; terms outside the
    set (or not produced by the model kind) are exactly zero.

    ``frozen_target`` replaces the value of a_f_p used as the cyc_s target.
    Finite-difference checks need it: the stop-gradient makes the analytic
    gradient that of a loss whose target does not move with the parameters.
    """
    lam_s, lam_p, lam_c = (float(v) for v in lambdas)
    if min(lam_s, lam_p, lam_c) < 0:
        raise ValueError(f"loss weights must be >= 0, got {lambdas}")
    active = set(KIND_TERMS[kind]) if terms is None else set(terms) & set(KIND_TERMS[kind])
    unknown = set(terms or ()) - set(TERMS)
    if unknown:
        raise ValueError(f"unknown loss terms {sorted(unknown)}")
    needed = {
        "recog_o": ("a_o_hat",),
        "exp_f": ("a_f_s",),
        "feat_f": ("x_f_hat",),
        "antic_f": ("a_f_p",),
        "cyc_p": ("x_o_hat",),
        "cyc_s": ("a_f_s", "a_f_p"),
    }
    for term in active:
        for attr in needed[term]:
            if getattr(outputs, attr) is None:
                raise ValueError(f"loss term {term} needs output {attr}, missing for kind {kind}")

    def term(name, fn):
        return fn() if name in active else _zero()

    def cyc_s():
        target = T.stop_gradient(outputs.a_f_p) if frozen_target is None else Tensor(frozen_target)
        if cycle_label_target == "hard":
            target = Tensor(one_hot(target.data.argmax(axis=-1), target.shape[-1]))
        elif cycle_label_target != "soft":
            raise ValueError(f"cycle_label_target must be soft or hard, got {cycle_label_target!r}")
        return cross_entropy(outputs.a_f_s, target)

    l_s = term("recog_o", lambda: cross_entropy(outputs.a_o_hat, a_o)) + term(
        "exp_f", lambda: cross_entropy(outputs.a_f_s, a_f)
    )
    l_p = term("feat_f", lambda: mse(outputs.x_f_hat, x_f)) + term(
        "antic_f", lambda: cross_entropy(outputs.a_f_p, a_f)
    )
    l_cyc_p = term("cyc_p", lambda: mse(outputs.x_o_hat, x_o))
    l_cyc_s = term("cyc_s", cyc_s)
    l_c = l_cyc_p + l_cyc_s
    total = l_s * lam_s + l_p * lam_p + l_c * lam_c
    br = LossBreakdown(
        l_s=l_s.item(),
        l_p=l_p.item(),
        l_cyc_p=l_cyc_p.item(),
        l_cyc_s=l_cyc_s.item(),
        l_c=l_c.item(),
        total=total.item(),
        lambda_s=lam_s,
        lambda_p=lam_p,
        lambda_c=lam_c,
    )
    return total, br
