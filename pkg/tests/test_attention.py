import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aact import tensor as T
from aact.attention import (
    attention_weights,
    encoder_forward,
    init_encoder,
    multi_head_self_attention,
    positional_encoding,
)
from aact.rng import Xoshiro256
from aact.tensor import Tensor

from helpers import chain_ref, pe_ref, zero_encoder


def test_positional_encoding_first_rows():
    pe = positional_encoding(3, 4)
    assert np.array_equal(pe[0], [0.0, 1.0, 0.0, 1.0])
    assert np.allclose(pe[1], [np.sin(1), np.cos(1), np.sin(0.01), np.cos(0.01)], atol=1e-15)
    assert np.allclose(positional_encoding(7, 6), pe_ref(7, 6), atol=1e-14, rtol=0)


def test_positional_encoding_rejects_odd_dim():
    with pytest.raises(ValueError):
        positional_encoding(3, 5)


def test_single_frame_attends_to_itself():
    enc = init_encoder(Xoshiro256(0), "g", 8, num_heads=2, num_layers=1)
    w = attention_weights(Tensor(np.ones((1, 8))), enc.layers[0], 2).data
    assert w.shape == (2, 1, 1) and np.array_equal(w, np.ones((2, 1, 1)))


def test_identical_rows_give_uniform_attention():
    enc = init_encoder(Xoshiro256(1), "g", 8, num_heads=2, num_layers=1)
    x = np.tile(np.linspace(-1, 1, 8), (5, 1))
    w = attention_weights(Tensor(x), enc.layers[0], 2).data
    assert np.allclose(w, 0.2, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 7), st.sampled_from([(8, 1), (8, 2), (8, 8), (16, 4)]))
def test_attention_rows_are_distributions(seed, t, dh):
    d, heads = dh
    enc = init_encoder(Xoshiro256(seed), "g", d, num_heads=heads, num_layers=1)
    x = np.random.default_rng(seed).normal(size=(2, t, d))
    w = attention_weights(Tensor(x), enc.layers[0], heads).data
    assert w.shape == (2, heads, t, t)
    assert w.min() >= 0 and np.allclose(w.sum(-1), 1.0, atol=1e-12)
    assert multi_head_self_attention(Tensor(x), enc.layers[0], heads).shape == (2, t, d)


def test_heads_must_divide_dim():
    with pytest.raises(T.ShapeError):
        init_encoder(Xoshiro256(0), "g", 6, num_heads=4)


def test_recognition_and_translation_shapes():
    r = Xoshiro256(2)
    rec = init_encoder(r, "r", 8, num_heads=2)
    tra = init_encoder(r, "t", 8, num_heads=2, out_len=3)
    x = Tensor(np.random.default_rng(0).normal(size=(4, 6, 8)))
    assert encoder_forward(x, rec).shape == (4, 6, 8)
    assert encoder_forward(x, tra, 3).shape == (4, 3, 8)
    with pytest.raises(T.ShapeError):
        encoder_forward(x, tra, 5)
    with pytest.raises(T.ShapeError):
        encoder_forward(x, rec, 3)
    with pytest.raises(T.ShapeError):
        encoder_forward(Tensor(np.ones((6, 4))), rec)


def test_pass_through_encoder_is_layer_norm_chain():
    enc = zero_encoder(init_encoder(Xoshiro256(3), "g", 8, num_heads=2, num_layers=2))
    x = np.random.default_rng(1).normal(size=(5, 8))
    got = encoder_forward(Tensor(x), enc).data
    assert np.allclose(got, chain_ref(x + pe_ref(5, 8), 2), atol=1e-12, rtol=0)


def test_pass_through_translation_ignores_input():
    enc = zero_encoder(init_encoder(Xoshiro256(4), "g", 8, num_heads=2, out_len=3))
    rng = np.random.default_rng(2)
    a = encoder_forward(Tensor(rng.normal(size=(5, 8))), enc).data
    b = encoder_forward(Tensor(rng.normal(size=(5, 8))), enc).data
    assert np.array_equal(a, b)
    assert np.allclose(a, chain_ref(enc.query_tokens.data, 2), atol=1e-12, rtol=0)


@pytest.mark.parametrize("d,heads", [(8, 2), (16, 8)])
@pytest.mark.parametrize("seed", range(3))
def test_encoder_gradients_match_finite_differences(d, heads, seed):
    enc = init_encoder(Xoshiro256(seed), "g", d, num_heads=heads, num_layers=2, out_len=3)
    x = Tensor(np.random.default_rng(seed).normal(size=(2, 4, d)))
    w = np.random.default_rng(seed + 100).normal(size=(2, 3, d))

    def loss():
        return T.sum_(T.mul(encoder_forward(x, enc, 3), w))

    params = enc.tensors()
    analytic = T.backward(loss())
    numeric = T.finite_diff_grad(lambda: loss().item(), params, 1e-4)
    assert T.max_relative_error(analytic, numeric, {p.name: p.shape for p in params}) <= 1e-4
