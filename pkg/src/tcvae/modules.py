"""Parameter containers and the small layer vocabulary the model is built from.

A :class:`Module` owns parameters through plain attributes; traversal order is
attribute insertion order, which is fixed by construction order, so parameter
naming, optimizer state, and checkpoints are all deterministic.
"""

from __future__ import annotations

import numpy as np

from tcvae.autodiff import Parameter, Tensor, default_dtype, matmul, tanh

__all__ = ["Linear", "LayerNorm", "MLP", "Module"]


class Module:
    """Base class providing recursive parameter discovery."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        found: list[tuple[str, Parameter]] = []
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                found.append((path, value))
            elif isinstance(value, Module):
                found.extend(value.named_parameters(f"{path}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Parameter):
                        found.append((f"{path}.{i}", item))
                    elif isinstance(item, Module):
                        found.extend(item.named_parameters(f"{path}.{i}."))
        return found

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


class Linear(Module):
    """Affine map on the last axis: x (..., fan_in) -> (..., fan_out)."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator,
                 scale: float | None = None, bias: bool = True):
        if scale is None:
            scale = 1.0 / np.sqrt(fan_in)
        dt = default_dtype()
        self.weight = Parameter(rng.normal(0.0, scale, size=(fan_in, fan_out)).astype(dt))
        self.bias = Parameter(np.zeros(fan_out, dtype=dt)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out


class MLP(Module):
    """Two-layer feed-forward network with tanh in between."""

    def __init__(self, fan_in: int, hidden: int, fan_out: int, rng: np.random.Generator,
                 scale: float | None = None):
        self.hidden_layer = Linear(fan_in, hidden, rng, scale)
        self.output_layer = Linear(hidden, fan_out, rng, scale)

    def __call__(self, x: Tensor) -> Tensor:
        return self.output_layer(tanh(self.hidden_layer(x)))


class LayerNorm(Module):
    """Normalize the last axis to zero mean and unit variance, then rescale."""

    def __init__(self, dim: int, eps: float = 1e-5):
        dt = default_dtype()
        self.scale = Parameter(np.ones(dim, dtype=dt))
        self.shift = Parameter(np.zeros(dim, dtype=dt))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        centered = x - x.mean(axis=-1, keepdims=True)
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / (var + self.eps).sqrt() * self.scale + self.shift
