"""Input-representation tests: sinusoid table oracles, balance-factor scaling,
stamp-table gradients, and decoder-input construction."""

import numpy as np
import pytest

from tcvae.autodiff import Tensor, gradient_check, rng_for
from tcvae.embedding import (
    EmbeddedSequence,
    InputEmbedding,
    build_decoder_input,
    position_embed,
    position_encoding,
)


def make_embedding(d_x=3, d=16, w=24, seed=0):
    emb = InputEmbedding(d_x=d_x, d=d, w=w, rng=rng_for(seed))
    emb.assign_names()
    return emb


def random_stamps(rng, shape):
    lows = np.array([1, 1, 0, 0, 0, 0])
    highs = np.array([12, 31, 7, 24, 60, 2])
    return rng.integers(lows, lows + (highs - lows), size=shape + (6,))


# -- position encoding ---------------------------------------------------

def test_position_embed_at_zero():
    vec = position_embed(0, w=24, d=8)
    np.testing.assert_array_equal(vec[0::2], np.zeros(4))
    np.testing.assert_array_equal(vec[1::2], np.ones(4))


def test_position_embed_first_entry_is_sin_one():
    for w in (4, 24, 96):
        assert position_embed(1, w=w, d=8)[0] == pytest.approx(0.8414709848078965, abs=1e-12)


def test_position_encoding_matches_direct_oracle():
    w, d, length = 24, 16, 30
    table = position_encoding(length, w, d)
    # Independent elementwise evaluation of the sinusoid definition.
    for pos in (0, 7, 29):
        for j in range(d // 2):
            angle = pos / (2.0 * w) ** (2.0 * j / d)
            assert table[pos, 2 * j] == pytest.approx(np.sin(angle), abs=1e-12)
            assert table[pos, 2 * j + 1] == pytest.approx(np.cos(angle), abs=1e-12)


def test_position_encoding_bounded():
    table = position_encoding(500, w=24, d=32)
    assert np.all(table >= -1.0) and np.all(table <= 1.0)


def test_position_embed_rejects_odd_dim():
    with pytest.raises(ValueError):
        position_embed(0, w=24, d=7)


def test_position_embed_rejects_negative_position():
    with pytest.raises(ValueError):
        position_embed(-1, w=24, d=8)


# -- combined embedding --------------------------------------------------

def test_embed_shapes():
    emb = make_embedding(d_x=3, d=16, w=24)
    rng = np.random.default_rng(0)
    values = rng.standard_normal((24, 3))
    stamps = random_stamps(rng, (24,))
    out = emb(Tensor(values), stamps)
    assert isinstance(out, EmbeddedSequence)
    assert out.combined.shape == (24, 16)
    assert out.token_stream.shape == (24, 16)
    assert (out.length, out.dim) == (24, 16)


def test_embed_batched_shapes():
    emb = make_embedding()
    rng = np.random.default_rng(1)
    out = emb(Tensor(rng.standard_normal((5, 24, 3))), random_stamps(rng, (5, 24)))
    assert out.combined.shape == (5, 24, 16)


def test_zero_balance_ignores_values():
    emb = make_embedding()
    emb.balance.data = np.asarray(0.0)
    rng = np.random.default_rng(2)
    stamps = random_stamps(rng, (24,))
    a = emb(Tensor(rng.standard_normal((24, 3))), stamps)
    b = emb(Tensor(rng.standard_normal((24, 3))), stamps)
    np.testing.assert_array_equal(a.combined.data, b.combined.data)


def test_zero_values_zero_tables_gives_pure_position_encoding():
    emb = make_embedding(d_x=3, d=16, w=24)
    for table in emb.stamp_tables:
        table.data[:] = 0.0
    rng = np.random.default_rng(3)
    stamps = random_stamps(rng, (24,))
    out = emb(Tensor(np.zeros((24, 3))), stamps)
    np.testing.assert_array_equal(out.combined.data, position_encoding(24, 24, 16))


def test_doubling_balance_doubles_value_contribution():
    emb = make_embedding()
    rng = np.random.default_rng(4)
    values = rng.standard_normal((24, 3))
    stamps = random_stamps(rng, (24,))
    token = emb(Tensor(values), stamps).token_stream.data
    # The scaled contribution itself doubles bit-exactly.
    emb.balance.data = np.asarray(1.0)
    one_contribution = emb.balance.data * token
    emb.balance.data = np.asarray(2.0)
    two_contribution = emb.balance.data * token
    np.testing.assert_array_equal(two_contribution, 2.0 * one_contribution)
    # Recovering it by subtracting PE and SE only costs float cancellation.
    pe = position_encoding(24, 24, 16)
    se = emb.stamp_embedding(stamps).data
    emb.balance.data = np.asarray(1.0)
    one = emb(Tensor(values), stamps).combined.data - pe - se
    emb.balance.data = np.asarray(2.0)
    two = emb(Tensor(values), stamps).combined.data - pe - se
    np.testing.assert_allclose(two, 2.0 * one, atol=1e-12)


def test_stamp_gradients_accumulate_per_index():
    emb = make_embedding(d_x=2, d=4, w=8)
    stamps = np.tile(np.array([3, 14, 2, 10, 0, 0]), (5, 1))  # same instant 5 times
    emb.stamp_embedding(stamps).sum().backward()
    month_table = emb.stamp_tables[0]
    np.testing.assert_array_equal(month_table.grad[3 - 1], np.full(4, 5.0))
    assert np.all(month_table.grad[np.arange(12) != 2] == 0.0)


def test_embedding_gradients_pass_gradient_check():
    emb = make_embedding(d_x=2, d=8, w=8)
    rng = np.random.default_rng(5)
    values = rng.standard_normal((8, 2))
    stamps = random_stamps(rng, (8,))

    def loss():
        out = emb(Tensor(values), stamps)
        return (out.combined * out.combined).sum()

    report = gradient_check(loss, emb.parameters(), max_entries_per_param=6)
    assert max(report.values()) < 1e-6
    assert any(name.startswith("conv_weight") for name in report)
    assert "balance" in report


def test_stamp_out_of_range_rejected():
    emb = make_embedding()
    stamps = np.zeros((24, 6), dtype=np.int64)
    stamps[:, 0] = 13  # impossible month
    stamps[:, 1] = 1
    with pytest.raises(ValueError, match="month"):
        emb(Tensor(np.zeros((24, 3))), stamps)


def test_embedding_rejects_odd_dim():
    with pytest.raises(ValueError):
        InputEmbedding(d_x=3, d=15, w=24, rng=rng_for(0))


# -- decoder input -------------------------------------------------------

def test_build_decoder_input_shape_and_zeros():
    rng = np.random.default_rng(6)
    values = rng.standard_normal((4, 2))
    input_stamps = random_stamps(rng, (4,))
    target_stamps = random_stamps(rng, (3,))
    dec_values, dec_stamps = build_decoder_input(values, input_stamps, target_stamps, token_len=2)
    assert dec_values.shape == (5, 2)
    assert dec_stamps.shape == (5, 6)
    np.testing.assert_array_equal(dec_values[:2], values[2:])
    np.testing.assert_array_equal(dec_values[2:], np.zeros((3, 2)))
    np.testing.assert_array_equal(dec_stamps[:2], input_stamps[2:])
    np.testing.assert_array_equal(dec_stamps[2:], target_stamps)


def test_build_decoder_input_full_window_token():
    rng = np.random.default_rng(7)
    values = rng.standard_normal((4, 2))
    dec_values, _ = build_decoder_input(values, random_stamps(rng, (4,)),
                                        random_stamps(rng, (2,)), token_len=4)
    np.testing.assert_array_equal(dec_values[:4], values)


def test_build_decoder_input_rejects_bad_token_len():
    rng = np.random.default_rng(8)
    values = np.zeros((4, 2))
    stamps = random_stamps(rng, (4,))
    tgt = random_stamps(rng, (2,))
    with pytest.raises(ValueError):
        build_decoder_input(values, stamps, tgt, token_len=0)
    with pytest.raises(ValueError):
        build_decoder_input(values, stamps, tgt, token_len=5)
