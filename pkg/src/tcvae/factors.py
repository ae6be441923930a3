"""Hawkes-modulated temporal attention and the fixed statistic factor matrix.

A position's attention score is the mean of its bilinear interaction with the
whole token stream; softmax over positions weights the tokens, and a learned
excitation/decay pair re-excites recent positive responses the way a Hawkes
intensity re-excites after events.  Factor extraction then summarizes the
modulated stream into q = 9 per-column statistics.
"""

from __future__ import annotations

import numpy as np

from tcvae.autodiff import (
    Parameter,
    Tensor,
    concat,
    default_dtype,
    ensure_tensor,
    exp,
    relu,
    softmax,
    softplus,
    swapaxes,
    take_along_axis,
)
from tcvae.modules import Module

__all__ = ["FACTOR_COUNT", "HawkesAttention", "default_time_offsets", "extract_factors"]

FACTOR_COUNT = 9

# softplus(x) = 1.0 at this unconstrained value.
_DECAY_RAW_INIT = float(np.log(np.expm1(1.0)))


def default_time_offsets(w: int) -> np.ndarray:
    """Elapsed sampling intervals since each position: w-1-position."""
    return np.arange(w - 1, -1, -1, dtype=np.float64)


class HawkesAttention(Module):
    """Temporal attention with Hawkes-style excitation of recent responses."""

    def __init__(self, d: int, rng: np.random.Generator):
        dt = default_dtype()
        self.weight = Parameter(rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)).astype(dt))
        self.excitation = Parameter(np.asarray(0.1, dtype=dt))
        self.decay_raw = Parameter(np.asarray(_DECAY_RAW_INIT, dtype=dt))

    @property
    def decay(self) -> Tensor:
        """Effective decay rate, kept positive through softplus."""
        return softplus(self.decay_raw)

    def temporal_attention(self, tokens) -> tuple[Tensor, Tensor]:
        """Score each position by the mean of its bilinear response to the
        stream; return (softmax weights alpha, weighted tokens zeta)."""
        u = ensure_tensor(tokens)
        responses = (u @ self.weight) @ swapaxes(u, -1, -2)   # (..., w, w)
        scores = responses.mean(axis=-1)                      # (..., w)
        alpha = softmax(scores, axis=-1)
        lead = (slice(None),) * (alpha.ndim - 1)
        zeta = alpha[lead + (slice(None), None)] * u
        return alpha, zeta

    def hawkes_modulate(self, zeta, time_offsets: np.ndarray) -> Tensor:
        """B = zeta + excitation * max(zeta, 0) * exp(-decay * dt) per row.

        ``time_offsets`` counts elapsed sampling intervals and must be
        non-negative.  With excitation 0 the output is exactly zeta.
        """
        offsets = np.asarray(time_offsets, dtype=np.float64)
        if np.any(offsets < 0):
            raise ValueError("time offsets must be non-negative")
        zeta = ensure_tensor(zeta)
        envelope = exp(-self.decay * Tensor(offsets))
        lead = (slice(None),) * (envelope.ndim - 1)
        envelope = envelope[lead + (slice(None), None)]
        return zeta + self.excitation * relu(zeta) * envelope

    def __call__(self, tokens, modulate: bool = True) -> Tensor:
        """Full stream transform: attention then (optionally) excitation.

        ``modulate=False`` is the excitation-free variant, returning the
        attention-weighted tokens untouched.
        """
        _, zeta = self.temporal_attention(tokens)
        if not modulate:
            return zeta
        w = zeta.shape[-2]
        return self.hawkes_modulate(zeta, default_time_offsets(w))


def _replicate(row: Tensor, width: int) -> Tensor:
    ones = Tensor(np.ones((1, width), dtype=row.data.dtype))
    return row * ones


def extract_factors(stream) -> Tensor:
    """Summarize a (..., w, d) stream into the (..., 9, d) factor matrix.

    Rows, in order: first, last, max, min, median, mean, population std,
    then the std over the d column-means and the std over the d column-stds,
    each replicated across columns.  Median of an even-length column is the
    mean of its two middle values.
    """
    b = ensure_tensor(stream)
    w = b.shape[-2]
    d = b.shape[-1]
    lead = (slice(None),) * (b.ndim - 2)

    first = b[lead + (slice(0, 1),)]
    last = b[lead + (slice(w - 1, w),)]
    highest = b.max(axis=-2, keepdims=True)
    lowest = b.min(axis=-2, keepdims=True)

    order = np.argsort(b.data, axis=-2)
    lo_mid = take_along_axis(b, order[lead + (slice((w - 1) // 2, (w - 1) // 2 + 1),)], axis=-2)
    hi_mid = take_along_axis(b, order[lead + (slice(w // 2, w // 2 + 1),)], axis=-2)
    median = (lo_mid + hi_mid) * 0.5

    mean = b.mean(axis=-2, keepdims=True)
    centered = b - mean
    std = (centered * centered).mean(axis=-2, keepdims=True).sqrt()

    def column_spread(row: Tensor) -> Tensor:
        centered_row = row - row.mean(axis=-1, keepdims=True)
        return (centered_row * centered_row).mean(axis=-1, keepdims=True).sqrt()

    mean_spread = _replicate(column_spread(mean), d)
    std_spread = _replicate(column_spread(std), d)

    return concat([first, last, highest, lowest, median, mean, std,
                   mean_spread, std_spread], axis=-2)
