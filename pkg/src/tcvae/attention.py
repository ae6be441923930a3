"""Multi-head scaled-dot attention with factor-conditioned vector gates.

Each head is summarized by its timestep mean; the factor matrix contributes a
learned summary vector.  All n + 1 summaries vote through one shared affine
map, votes are scored against each head, softmax-normalized, and the resulting
mixture is squashed into a per-head vector gate.  Gated heads are concatenated
and projected, so forcing every gate to one recovers plain multi-head
attention bit for bit.
"""

from __future__ import annotations

import numpy as np

from tcvae.autodiff import (
    Parameter,
    Tensor,
    concat,
    default_dtype,
    ensure_tensor,
    matmul,
    reshape,
    sigmoid,
    softmax,
    swapaxes,
)
from tcvae.modules import Linear, Module

__all__ = ["GatedMultiHeadAttention", "causal_mask", "gate_votes", "scaled_dot_attention"]

MASK_VALUE = -1e9  # large finite negative; -inf would trip the finiteness invariant


def scaled_dot_attention(query, key, value, mask: np.ndarray | None = None) -> Tensor:
    """softmax(Q Kᵀ / sqrt(d_key)) V with optional additive mask."""
    q, k, v = ensure_tensor(query), ensure_tensor(key), ensure_tensor(value)
    scale = 1.0 / np.sqrt(k.shape[-1])
    logits = (q @ swapaxes(k, -1, -2)) * scale
    if mask is not None:
        logits = logits + Tensor(mask)
    return softmax(logits, axis=-1) @ v


def causal_mask(length: int) -> np.ndarray:
    """Additive mask forbidding attention to future positions."""
    mask = np.zeros((length, length), dtype=default_dtype())
    mask[np.triu_indices(length, k=1)] = MASK_VALUE
    return mask


def gate_votes(head_summaries, factor_summary, weight, bias) -> tuple[Tensor, Tensor]:
    """Vector gates from per-head summaries and the factor summary.

    ``head_summaries`` is (..., n, d_head) and ``factor_summary``
    (..., 1, d_head).  One shared affine map produces all n + 1 votes; scores
    are summary-vote dot products, normalized across votes, and the weighted
    candidate mixture is squashed into gates.  Returns (beta, gates) with
    beta rows summing to one and every gate entry strictly inside (0, 1).
    """
    summaries = ensure_tensor(head_summaries)
    candidates = concat([summaries, ensure_tensor(factor_summary)], axis=-2)
    votes = matmul(candidates, weight) + bias                  # (..., n+1, d_head)
    scores = summaries @ swapaxes(votes, -1, -2)               # (..., n, n+1)
    beta = softmax(scores, axis=-1)
    gates = sigmoid(beta @ candidates)                         # (..., n, d_head)
    return beta, gates


class GatedMultiHeadAttention(Module):
    """Self or cross attention over n heads with factor-conditioned gates."""

    def __init__(self, d: int, n_heads: int, factor_rows: int, rng: np.random.Generator):
        if d % n_heads != 0:
            raise ValueError(f"head count {n_heads} must divide model dim {d}")
        self.d = d
        self.n_heads = n_heads
        self.d_head = d // n_heads
        self.query_proj = Linear(d, d, rng)
        self.key_proj = Linear(d, d, rng)
        self.value_proj = Linear(d, d, rng)
        self.output_proj = Linear(d, d, rng)
        dt = default_dtype()
        self.gate_weight = Parameter(rng.normal(0.0, 1.0 / np.sqrt(self.d_head),
                                                size=(self.d_head, self.d_head)).astype(dt))
        self.gate_bias = Parameter(np.zeros(self.d_head, dtype=dt))
        self.factor_proj = Linear(factor_rows * d, self.d_head, rng)

    def _split_heads(self, x: Tensor) -> Tensor:
        lead = x.shape[:-2]
        length = x.shape[-2]
        split = reshape(x, lead + (length, self.n_heads, self.d_head))
        return swapaxes(split, -3, -2)  # (..., n, L, d_head)

    def _merge_heads(self, heads: Tensor) -> Tensor:
        lead = heads.shape[:-3]
        length = heads.shape[-2]
        merged = swapaxes(heads, -3, -2)  # (..., L, n, d_head)
        return reshape(merged, lead + (length, self.d))

    def factor_summary(self, factors: Tensor) -> Tensor:
        lead = factors.shape[:-2]
        flat = reshape(factors, lead + (1, factors.shape[-2] * factors.shape[-1]))
        return self.factor_proj(flat)  # (..., 1, d_head)

    def __call__(self, x, factors=None, memory=None, mask: np.ndarray | None = None,
                 gated: bool = True) -> Tensor:
        """Attend ``x`` over itself (or ``memory`` when given for cross
        attention); ``gated=False`` is plain multi-head attention."""
        x = ensure_tensor(x)
        source = x if memory is None else ensure_tensor(memory)
        q = self._split_heads(self.query_proj(x))
        k = self._split_heads(self.key_proj(source))
        v = self._split_heads(self.value_proj(source))
        heads = scaled_dot_attention(q, k, v, mask)  # (..., n, L, d_head)
        if gated:
            if factors is None:
                raise ValueError("gated attention requires the factor matrix")
            summaries = heads.mean(axis=-2)  # (..., n, d_head)
            _, gates = gate_votes(summaries, self.factor_summary(factors),
                                  self.gate_weight, self.gate_bias)
            lead = (slice(None),) * (gates.ndim - 2)
            heads = heads * gates[lead + (slice(None), None)]
        return self.output_proj(self._merge_heads(heads))
