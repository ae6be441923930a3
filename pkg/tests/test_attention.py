"""Gated attention tests: scaled-dot oracles, gate-vote hand example, the
ungated identity with textbook multi-head attention, and masking."""

import numpy as np
import pytest

from tcvae.autodiff import Tensor, rng_for
from tcvae.attention import (
    GatedMultiHeadAttention,
    causal_mask,
    gate_votes,
    scaled_dot_attention,
)


def make_attention(d=8, n=2, q=9, seed=0):
    att = GatedMultiHeadAttention(d, n, q, rng_for(seed))
    att.assign_names()
    return att


# -- scaled-dot attention ------------------------------------------------

def test_single_key_returns_value_row():
    rng = np.random.default_rng(0)
    q = Tensor(rng.standard_normal((4, 3)))
    k = Tensor(rng.standard_normal((1, 3)))
    v = Tensor(rng.standard_normal((1, 3)))
    out = scaled_dot_attention(q, k, v)
    np.testing.assert_allclose(out.data, np.tile(v.data, (4, 1)), atol=1e-14)


def test_zero_logits_average_value_rows():
    rng = np.random.default_rng(1)
    k = Tensor(rng.standard_normal((5, 3)))
    v = Tensor(rng.standard_normal((5, 3)))
    out = scaled_dot_attention(Tensor(np.zeros((2, 3))), k, v)
    np.testing.assert_allclose(out.data, np.tile(v.data.mean(axis=0), (2, 1)), atol=1e-13)


def test_two_key_hand_example():
    # d_key = 1 so the scale is 1; logits (ln 3, 0) give weights (0.75, 0.25).
    q = Tensor(np.array([[1.0]]))
    k = Tensor(np.array([[np.log(3.0)], [0.0]]))
    v = Tensor(np.array([[2.0], [-4.0]]))
    out = scaled_dot_attention(q, k, v)
    assert out.data[0, 0] == pytest.approx(0.75 * 2.0 + 0.25 * -4.0, abs=1e-12)


# -- gate votes ----------------------------------------------------------

def test_gate_vote_hand_example():
    # n = 1, identity vote map: score against own head 1, against factors 0.
    h_bar = Tensor(np.array([[1.0, 0.0]]))
    c_bar = Tensor(np.array([[0.0, 1.0]]))
    eye = Tensor(np.eye(2))
    zero = Tensor(np.zeros(2))
    beta, gates = gate_votes(h_bar, c_bar, eye, zero)
    e = np.e
    np.testing.assert_allclose(beta.data, [[e / (e + 1.0), 1.0 / (e + 1.0)]], atol=1e-12)
    expected_gate = 1.0 / (1.0 + np.exp(-np.array([e / (e + 1.0), 1.0 / (e + 1.0)])))
    np.testing.assert_allclose(gates.data, [expected_gate], atol=1e-12)


def test_equal_scores_give_uniform_votes():
    rng = np.random.default_rng(2)
    h_bar = Tensor(rng.standard_normal((3, 4)))
    c_bar = Tensor(rng.standard_normal((1, 4)))
    beta, _ = gate_votes(h_bar, c_bar, Tensor(np.zeros((4, 4))), Tensor(np.zeros(4)))
    np.testing.assert_allclose(beta.data, np.full((3, 4), 0.25), atol=1e-12)


def test_vote_rows_are_probability_vectors_and_gates_open():
    rng = np.random.default_rng(3)
    for _ in range(25):
        h_bar = Tensor(rng.standard_normal((4, 6)))
        c_bar = Tensor(rng.standard_normal((1, 6)))
        w = Tensor(rng.standard_normal((6, 6)))
        b = Tensor(rng.standard_normal(6))
        beta, gates = gate_votes(h_bar, c_bar, w, b)
        np.testing.assert_allclose(beta.data.sum(axis=-1), np.ones(4), atol=1e-12)
        assert np.all(beta.data >= 0.0)
        assert np.all(gates.data > 0.0) and np.all(gates.data < 1.0)


# -- gated multi-head ----------------------------------------------------

def reference_multihead(att, x):
    """Textbook multi-head attention from the module's own weights, written
    with the same stable-softmax order of operations."""
    def linear(v, layer):
        return v @ layer.weight.data + layer.bias.data

    n, dh = att.n_heads, att.d_head
    length = x.shape[0]
    q = linear(x, att.query_proj).reshape(length, n, dh).swapaxes(0, 1)
    k = linear(x, att.key_proj).reshape(length, n, dh).swapaxes(0, 1)
    v = linear(x, att.value_proj).reshape(length, n, dh).swapaxes(0, 1)
    logits = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
    shifted = logits - logits.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    weights = weights / weights.sum(axis=-1, keepdims=True)
    heads = weights @ v
    merged = heads.swapaxes(0, 1).reshape(length, n * dh)
    return linear(merged, att.output_proj)


def test_ungated_path_is_bit_identical_to_plain_multihead():
    att = make_attention(d=8, n=2)
    x = np.random.default_rng(4).standard_normal((6, 8))
    out = att(Tensor(x), gated=False)
    assert np.array_equal(out.data, reference_multihead(att, x))


def test_gated_output_shape():
    att = make_attention(d=8, n=4)
    rng = np.random.default_rng(5)
    out = att(Tensor(rng.standard_normal((6, 8))), factors=Tensor(rng.standard_normal((9, 8))))
    assert out.shape == (6, 8)


def test_batched_gated_output_shape():
    att = make_attention(d=8, n=2)
    rng = np.random.default_rng(6)
    out = att(Tensor(rng.standard_normal((3, 6, 8))),
              factors=Tensor(rng.standard_normal((3, 9, 8))))
    assert out.shape == (3, 6, 8)


def test_factor_sensitivity():
    att = make_attention(d=8, n=2)
    rng = np.random.default_rng(7)
    x = Tensor(rng.standard_normal((6, 8)))
    out_a = att(x, factors=Tensor(rng.standard_normal((9, 8))))
    out_b = att(x, factors=Tensor(rng.standard_normal((9, 8))))
    assert np.max(np.abs(out_a.data - out_b.data)) > 0.0


def test_gating_changes_output():
    att = make_attention(d=8, n=2)
    rng = np.random.default_rng(8)
    x = Tensor(rng.standard_normal((6, 8)))
    factors = Tensor(rng.standard_normal((9, 8)))
    assert np.max(np.abs(att(x, factors=factors).data - att(x, gated=False).data)) > 0.0


def test_cross_attention_uses_memory_length():
    att = make_attention(d=8, n=2)
    rng = np.random.default_rng(9)
    x = Tensor(rng.standard_normal((4, 8)))
    memory = Tensor(rng.standard_normal((10, 8)))
    out = att(x, factors=Tensor(rng.standard_normal((9, 8))), memory=memory)
    assert out.shape == (4, 8)


def test_causal_mask_blocks_future_positions():
    att = make_attention(d=8, n=2)
    rng = np.random.default_rng(10)
    x = rng.standard_normal((6, 8))
    mask = causal_mask(6)
    base = att(Tensor(x), gated=False, mask=mask).data
    x_future = x.copy()
    x_future[4:] += rng.standard_normal((2, 8))
    bumped = att(Tensor(x_future), gated=False, mask=mask).data
    np.testing.assert_allclose(bumped[:4], base[:4], atol=1e-12)
    assert np.max(np.abs(bumped[4:] - base[4:])) > 0.0


def test_head_count_must_divide_dim():
    with pytest.raises(ValueError):
        GatedMultiHeadAttention(8, 3, 9, rng_for(0))


def test_gated_requires_factors():
    att = make_attention()
    with pytest.raises(ValueError):
        att(Tensor(np.zeros((4, 8))), gated=True)
