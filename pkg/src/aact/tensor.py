"""Dense float64 tensors with tape-based reverse-mode differentiation.

Values live in numpy arrays (row-major, float64). Every differentiable op
records a node holding its parents and a closure that maps the output
gradient to parent gradients; :func:`backward` replays the recorded graph in
reverse topological order and then frees it.
"""
from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

GradientMap = dict  # name -> np.ndarray, same shape as the parameter

_STATE = threading.local()


def _trace(mask: np.ndarray) -> None:
    # activation patterns of piecewise-linear ops, collected by finite_diff_grad
    log = getattr(_STATE, "kink_trace", None)
    if log is not None:
        log.append(mask.tobytes())


def _recording() -> bool:
    return getattr(_STATE, "recording", True)


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in this thread (forward values are unchanged)."""
    prev = _recording()
    _STATE.recording = False
    try:
        yield
    finally:
        _STATE.recording = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    if _recording() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _binary(a, b, fn, op: str) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _scale(x: Tensor, c: float, shift: float = 0.0) -> Tensor:
    """x * c + shift for a python scalar c (fast path for constant operands)."""
    out = x.data * c if shift == 0.0 else x.data * c + shift
    return _make(out, (x,), lambda g: (g * c,))


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    if isinstance(a, Tensor) and isinstance(b, (int, float)):
        return _scale(a, 1.0, float(b))
    a, b = as_tensor(a), as_tensor(b)
    out = _binary(a, b, np.add, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary(a, b, np.subtract, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), bw)


def mul(a, b) -> Tensor:
    if isinstance(a, Tensor) and isinstance(b, (int, float)):
        return _scale(a, float(b))
    a, b = as_tensor(a), as_tensor(b)
    out = _binary(a, b, np.multiply, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _trace(mask)
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def clamp_min(x: Tensor, lo: float) -> Tensor:
    mask = x.data >= lo
    _trace(mask)
    return _make(np.maximum(x.data, lo), (x,), lambda g: (g * mask,))


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(x.data)


# ---------------------------------------------------------------- structural

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw)


def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (x,), bw)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = math.prod(x.shape[a] for a in axes)
    return _scale(sum_(x, axis, keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    out = np.swapaxes(x.data, a, b)
    return _make(out, (x,), lambda g: (np.swapaxes(g, a, b),))


def index(x: Tensor, idx) -> Tensor:
    out = x.data[idx]

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out, dtype=np.float64), (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, bw)


def broadcast_to(x: Tensor, shape) -> Tensor:
    out = np.broadcast_to(x.data, shape).copy()
    return _make(out, (x,), lambda g: (_unbroadcast(g, x.shape),))


# ---------------------------------------------------------------- composites

def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {x.shape}")
    return axis % x.ndim


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be > 0, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} must both be ({d},)"
        )
    rd = 1.0 / d
    xc = x.data - x.data.sum(axis=-1, keepdims=True) * rd
    var = (xc * xc).sum(axis=-1, keepdims=True) * rd
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx_hat = g * gamma.data
        gx = inv * (
            gx_hat
            - gx_hat.sum(axis=-1, keepdims=True) * rd
            - xhat * ((gx_hat * xhat).sum(axis=-1, keepdims=True) * rd)
        )
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(out, (x, gamma, beta), bw)


# ---------------------------------------------------------------- differentiation

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> GradientMap:
    """Gradients of a scalar ``loss`` w.r.t. every named leaf reachable from it.

    Leaves the loss does not depend on are absent from the map. The recorded
    graph is released afterwards, so a loss can be differentiated once.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    if loss._backward is None and loss.name is None:
        raise GraphError("loss is detached from its graph (already differentiated?)")
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    out: GradientMap = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.name is not None:
                out[node.name] = out[node.name] + g if node.name in out else g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
        node._parents = ()
        node._backward = None
    return out


def finite_diff_grad(
    f: Callable[[], float],
    params: Iterable[Tensor],
    step: float = 1e-4,
    coords: dict[str, Sequence[int]] | None = None,
    kinks: list | None = None,
) -> GradientMap:
    """Central-difference gradient of ``f`` w.r.t. ``params``, perturbed in place.

    ``f`` takes no arguments and reads the current parameter values. When
    ``coords`` maps a parameter name to flat indices, only those coordinates
    are estimated and every other entry is NaN.

    When ``kinks`` is a list, the relu/clamp activation patterns at +step and
    -step are compared; a coordinate whose perturbation flips any of them
    straddles a kink, where the central difference estimates neither one-sided
    derivative. Such coordinates are left NaN and appended as (name, index).
    """
    if step <= 0:
        raise ValueError(f"step must be > 0, got {step}")

    def evaluate():
        if kinks is None:
            return float(f()), None
        _STATE.kink_trace = []
        try:
            return float(f()), _STATE.kink_trace
        finally:
            _STATE.kink_trace = None

    out: GradientMap = {}
    with no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            g = np.full(flat.shape, np.nan) if coords is not None else np.empty(flat.shape)
            idxs = range(flat.size) if coords is None else coords.get(p.name, ())
            for i in idxs:
                orig = flat[i]
                flat[i] = orig + step
                fp, trace_p = evaluate()
                flat[i] = orig - step
                fm, trace_m = evaluate()
                flat[i] = orig
                if trace_p != trace_m:
                    kinks.append((p.name, int(i)))
                    g[i] = np.nan
                else:
                    g[i] = (fp - fm) / (2.0 * step)
            out[p.name] = g.reshape(p.shape)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """||a - n|| / max(||a||, ||n||, floor) over the non-NaN entries of ``numeric``."""
    mask = ~np.isnan(numeric)
    a = np.asarray(analytic)[mask]
    n = numeric[mask]
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def max_relative_error(analytic: GradientMap, numeric: GradientMap, shapes: dict) -> float:
    worst = 0.0
    for name, num in numeric.items():
        a = analytic.get(name)
        if a is None:
            a = np.zeros(shapes[name])
        worst = max(worst, relative_error(a, num))
    return worst
