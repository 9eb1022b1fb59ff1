"""Independent numpy references used as test oracles."""
import numpy as np


def ln_ref(x, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def pe_ref(length, d):
    pe = np.zeros((length, d))
    for pos in range(length):
        for i in range(0, d, 2):
            pe[pos, i] = np.sin(pos / 10000 ** (i / d))
            pe[pos, i + 1] = np.cos(pos / 10000 ** (i / d))
    return pe


def zero_encoder(enc):
    """Make every block a pass-through: only the two layer norms remain."""
    for layer in enc.layers:
        for t in (layer.wq, layer.wk, layer.wv, layer.wo, layer.w1, layer.b1, layer.w2, layer.b2):
            t.data[...] = 0.0
    return enc


def chain_ref(x, num_layers, eps=1e-5):
    for _ in range(2 * num_layers):
        x = ln_ref(x, eps)
    return x


# criterion number -> (passed, detail); printed by the terminal-summary hook
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(number: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
    return passed


def adjacent_violations(values):
    """(count of increases, largest increase) along a sequence meant to be non-increasing."""
    ups = [b - a for a, b in zip(values, values[1:]) if b > a]
    return len(ups), max(ups, default=0.0)


def monotone_up_to_one(values, tol, increasing=False):
    seq = [-v for v in values] if increasing else list(values)
    count, worst = adjacent_violations(seq)
    return count == 0 or (count == 1 and worst <= tol)
