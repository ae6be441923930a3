"""Input representation: value convolution, fixed position encoding, and
trainable calendar-stamp embeddings, balanced by a learnable factor.

The combined embedding is ``rho * WE(x) + PE + SE`` where WE is a kernel-3
circularly padded 1-D convolution over time, PE the sinusoid table with base
(2w)^(2j/d), and SE the sum of six per-stamp-type embedding lookups.  The
decoder side reuses the same parameters on a start-token-plus-zeros sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tcvae.autodiff import Parameter, Tensor, conv1d, default_dtype, ensure_tensor
from tcvae.data import STAMP_DIM
from tcvae.modules import Module

__all__ = [
    "STAMP_RANGES",
    "EmbeddedSequence",
    "InputEmbedding",
    "build_decoder_input",
    "position_embed",
    "position_encoding",
]

# (name, lowest valid value, cardinality) per stamp slot.
STAMP_RANGES = (
    ("month", 1, 12),
    ("day", 1, 31),
    ("weekday", 0, 7),
    ("hour", 0, 24),
    ("minute", 0, 60),
    ("ampm", 0, 2),
)


@dataclass
class EmbeddedSequence:
    """Embedded window: the combined representation and the raw value tokens."""

    combined: Tensor      # (..., L, d)
    token_stream: Tensor  # (..., L, d), convolution output alone

    @property
    def length(self) -> int:
        return self.combined.shape[-2]

    @property
    def dim(self) -> int:
        return self.combined.shape[-1]


def position_encoding(length: int, w: int, d: int) -> np.ndarray:
    """Sinusoid table of shape (length, d): even dims sin(pos/(2w)^(2j/d)),
    odd dims cos of the same angle.  Parameter-free and deterministic."""
    if d % 2 != 0:
        raise ValueError(f"embedding dim must be even for sinusoid pairing; got {d}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    j2 = np.arange(0, d, 2, dtype=np.float64)
    angles = pos / np.power(2.0 * w, j2 / d)
    table = np.empty((length, d), dtype=default_dtype())
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


def position_embed(pos: int, w: int, d: int) -> np.ndarray:
    """Single-position encoding vector; ``pos`` must be non-negative."""
    if pos < 0:
        raise ValueError(f"position must be non-negative; got {pos}")
    return position_encoding(pos + 1, w, d)[pos]


def _validate_stamps(stamps: np.ndarray) -> np.ndarray:
    stamps = np.asarray(stamps)
    if stamps.shape[-1] != STAMP_DIM:
        raise ValueError(f"expected {STAMP_DIM} stamp slots, got {stamps.shape[-1]}")
    idx = stamps.astype(np.int64)
    for slot, (name, low, card) in enumerate(STAMP_RANGES):
        vals = idx[..., slot]
        if vals.min() < low or vals.max() >= low + card:
            raise ValueError(f"stamp {name!r} out of range [{low}, {low + card - 1}]")
    return idx


class InputEmbedding(Module):
    """Eq.-3-style embedding shared by the encoder and decoder sides."""

    def __init__(self, d_x: int, d: int, w: int, rng: np.random.Generator):
        if d % 2 != 0:
            raise ValueError(f"embedding dim must be even; got {d}")
        dt = default_dtype()
        self.conv_weight = Parameter(rng.normal(0.0, 1.0 / np.sqrt(3 * d_x),
                                                size=(3, d_x, d)).astype(dt))
        self.conv_bias = Parameter(np.zeros(d, dtype=dt))
        # additive lookups start neutral: rows are gathered, so gradients
        # stay row-distinct, and a calendar value that never occurs in
        # training contributes nothing at inference instead of noise
        self.stamp_tables = [Parameter(np.zeros((card, d), dtype=dt))
                             for _, _, card in STAMP_RANGES]
        self.balance = Parameter(np.asarray(1.0, dtype=dt))
        self.w = w
        self.d = d
        self.d_x = d_x

    def stamp_embedding(self, stamps: np.ndarray) -> Tensor:
        """Sum of the six per-type table lookups; gradients accumulate per
        stamp index through the gather."""
        idx = _validate_stamps(stamps)
        total = None
        for slot, (table, (_, low, _)) in enumerate(zip(self.stamp_tables, STAMP_RANGES)):
            rows = table[idx[..., slot] - low]
            total = rows if total is None else total + rows
        return total

    def __call__(self, values, stamps: np.ndarray) -> EmbeddedSequence:
        values = ensure_tensor(values)
        length = values.shape[-2]
        token = conv1d(values, self.conv_weight, self.conv_bias)
        pe = Tensor(position_encoding(length, self.w, self.d))
        se = self.stamp_embedding(stamps)
        combined = self.balance * token + pe + se
        return EmbeddedSequence(combined=combined, token_stream=token)


def build_decoder_input(values: np.ndarray, input_stamps: np.ndarray,
                        target_stamps: np.ndarray, token_len: int,
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Decoder-side sequence: the last ``token_len`` input rows followed by
    one all-zero row per horizon step, with stamps for all token_len + h
    instants (future stamps come from the sampling grid)."""
    values = np.asarray(values)
    w = values.shape[-2]
    if not 1 <= token_len <= w:
        raise ValueError(f"token_len must be in [1, {w}]; got {token_len}")
    h = target_stamps.shape[-2]
    token_part = values[..., w - token_len:, :]
    zeros = np.zeros(values.shape[:-2] + (h, values.shape[-1]), dtype=values.dtype)
    dec_values = np.concatenate([token_part, zeros], axis=-2)
    dec_stamps = np.concatenate([input_stamps[..., w - token_len:, :], target_stamps], axis=-2)
    return dec_values, dec_stamps
