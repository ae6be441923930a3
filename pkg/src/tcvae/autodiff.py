"""Reverse-mode automatic differentiation over a dynamically recorded graph.

Every operation on :class:`Tensor` records its inputs and a backward closure
on a tape; calling :meth:`Tensor.backward` on a scalar result walks the tape
in reverse topological order and accumulates gradients into ``.grad``.  numpy
supplies the dense kernels; this module supplies the graph.

All primitives support arbitrary leading (batch) axes via numpy broadcasting,
with gradients reduced back to the operand shapes.  Non-finite values produced
by any primitive raise :class:`NonFiniteError` immediately rather than
propagating NaN through a training run.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "GraphError",
    "NonFiniteError",
    "Parameter",
    "Tensor",
    "concat",
    "conv1d",
    "default_dtype",
    "dtype_for_tag",
    "ensure_tensor",
    "gradient_check",
    "maximum",
    "no_grad",
    "relu",
    "rng_for",
    "seeded_gaussian",
    "seeded_normal",
    "set_default_dtype",
    "softmax",
    "softplus",
    "take_along_axis",
]


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or infinity."""


class GraphError(RuntimeError):
    """The recorded graph cannot support the requested operation."""


_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True
_FINITE_CHECKS = True

_DTYPE_TAGS = {"f32": np.float32, "f64": np.float64}


def set_default_dtype(dtype) -> None:
    """Set the element type used for newly created tensors."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


def dtype_for_tag(tag: str):
    """Map a precision tag ('f32' or 'f64') to a numpy dtype."""
    try:
        return _DTYPE_TAGS[tag]
    except KeyError:
        raise ValueError(f"unknown precision tag {tag!r}; expected one of {sorted(_DTYPE_TAGS)}") from None


class no_grad:
    """Context manager that suspends graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _check_finite(data: np.ndarray) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NonFiniteError("non-finite value produced by a primitive operation")


class Tensor:
    """A node in the computation graph wrapping a numpy array."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        _check_finite(self.data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- construction ----------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"],
                 backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        _check_finite(data)
        out.grad = None
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- bookkeeping -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``.

        Raises :class:`GraphError` if called on a non-scalar or a node with no
        recorded graph, and :class:`NonFiniteError` on a non-finite loss.
        """
        if self.data.size != 1:
            raise GraphError(f"backward requires a scalar; got shape {self.shape}")
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError("backward called on a non-finite loss")
        if not self.requires_grad:
            raise GraphError("backward called on a node with no recorded graph")

        # Iterative topological sort; graphs here can exceed the recursion limit.
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes: Sequence[int]):
        return transpose(self, axes)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims: bool = False):
        return reduce_max(self, axis, keepdims)

    def min(self, axis=None, keepdims: bool = False):
        return reduce_min(self, axis, keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name or '?'}, shape={self.shape})"


def ensure_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- broadcasting helpers ------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise binary --------------------------------------------------

def add(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def maximum(a, b) -> Tensor:
    """Elementwise maximum; ties send the gradient to the first operand."""
    a, b = ensure_tensor(a), ensure_tensor(b)
    out_data = np.maximum(a.data, b.data)

    def backward(g):
        mask = a.data >= b.data
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * mask, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * (~mask), b.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Matrix product with stacked leading axes; both operands need ndim >= 2."""
    a, b = ensure_tensor(a), ensure_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise GraphError("matmul requires operands with at least 2 dimensions")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape))

    return Tensor._from_op(out_data, (a, b), backward)


# -- elementwise unary ---------------------------------------------------

def power(a, p: float) -> Tensor:
    a = ensure_tensor(a)
    p = float(p)
    with np.errstate(all="ignore"):
        out_data = a.data ** p

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1.0))

    return Tensor._from_op(out_data, (a,), backward)


def exp(a) -> Tensor:
    a = ensure_tensor(a)
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return Tensor._from_op(out_data, (a,), backward)


def log(a) -> Tensor:
    a = ensure_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return Tensor._from_op(out_data, (a,), backward)


def sqrt(a) -> Tensor:
    a = ensure_tensor(a)
    with np.errstate(invalid="ignore"):
        out_data = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            # Subgradient 0 at exactly zero, so zero-variance reductions do not
            # inject infinities into a training run.
            denom = 2.0 * out_data
            ga = np.where(a.data > 0.0, g / np.where(denom == 0.0, 1.0, denom), 0.0)
            a._accumulate(ga)

    return Tensor._from_op(out_data, (a,), backward)


def tanh(a) -> Tensor:
    a = ensure_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out_data * out_data))

    return Tensor._from_op(out_data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = ensure_tensor(a)
    # Stable in both tails.
    out_data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                        np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data * (1.0 - out_data))

    return Tensor._from_op(out_data, (a,), backward)


def relu(a) -> Tensor:
    a = ensure_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0.0))

    return Tensor._from_op(out_data, (a,), backward)


def softplus(a) -> Tensor:
    a = ensure_tensor(a)
    out_data = np.logaddexp(0.0, a.data)

    def backward(g):
        if a.requires_grad:
            s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                         np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
            a._accumulate(g * s)

    return Tensor._from_op(out_data, (a,), backward)


# -- reductions ----------------------------------------------------------

def _restore_reduced(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if not keepdims and axis is not None:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = ensure_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_restore_reduced(np.asarray(g), a.shape, axis, keepdims))

    return Tensor._from_op(np.asarray(out_data), (a,), backward)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = ensure_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax % a.ndim] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def backward(g):
        if a.requires_grad:
            a._accumulate(_restore_reduced(np.asarray(g), a.shape, axis, keepdims) / count)

    return Tensor._from_op(np.asarray(out_data), (a,), backward)


def _reduce_extreme(a, axis, keepdims, fn) -> Tensor:
    a = ensure_tensor(a)
    out_data = fn(a.data, axis=axis, keepdims=keepdims)
    kept = fn(a.data, axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            # Ties split the gradient evenly, matching central differences.
            mask = a.data == kept
            count = mask.sum(axis=axis, keepdims=True)
            gk = _restore_reduced(np.asarray(g), a.shape, axis, keepdims)
            a._accumulate(gk * mask / count)

    return Tensor._from_op(np.asarray(out_data), (a,), backward)


def reduce_max(a, axis=None, keepdims: bool = False) -> Tensor:
    return _reduce_extreme(a, axis, keepdims, np.max)


def reduce_min(a, axis=None, keepdims: bool = False) -> Tensor:
    return _reduce_extreme(a, axis, keepdims, np.min)


# -- shape and assembly --------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = ensure_tensor(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return Tensor._from_op(out_data, (a,), backward)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = ensure_tensor(a)
    axes = tuple(axes)
    out_data = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inverse))

    return Tensor._from_op(out_data, (a,), backward)


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = ensure_tensor(a)
    out_data = a.data.swapaxes(ax1, ax2)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.swapaxes(ax1, ax2))

    return Tensor._from_op(out_data, (a,), backward)


def getitem(a, key) -> Tensor:
    a = ensure_tensor(a)
    out_data = a.data[key]

    def backward(g):
        if a.requires_grad:
            gz = np.zeros_like(a.data)
            np.add.at(gz, key, g)
            a._accumulate(gz)

    return Tensor._from_op(np.asarray(out_data), (a,), backward)


def take_along_axis(a, indices: np.ndarray, axis: int) -> Tensor:
    """Differentiable gather along one axis with an integer index array."""
    a = ensure_tensor(a)
    out_data = np.take_along_axis(a.data, indices, axis)

    def backward(g):
        if a.requires_grad:
            gz = np.zeros_like(a.data)
            grids = list(np.indices(indices.shape, sparse=False))
            grids[axis] = indices
            np.add.at(gz, tuple(grids), g)
            a._accumulate(gz)

    return Tensor._from_op(out_data, (a,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [ensure_tensor(t) for t in tensors]
    if not parts:
        raise GraphError("concat requires at least one tensor")
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])

    return Tensor._from_op(out_data, parts, backward)


# -- fused structured primitives ----------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``; rows sum to one."""
    a = ensure_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            a._accumulate(out_data * (g - inner))

    return Tensor._from_op(out_data, (a,), backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """1-D convolution over the second-to-last axis with circular padding.

    ``x`` has shape (..., L, c_in) and ``weight`` (kernel, c_in, c_out) with an
    odd kernel width; stride is 1 and the output keeps length L.  Built from
    slicing, concatenation, and matrix products, so gradients come from the
    tape.
    """
    x = ensure_tensor(x)
    weight = ensure_tensor(weight)
    kernel = weight.shape[0]
    if kernel % 2 != 1:
        raise GraphError(f"conv1d requires an odd kernel width; got {kernel}")
    length = x.shape[-2]
    if length < kernel:
        raise GraphError(f"conv1d input length {length} shorter than kernel {kernel}")
    half = kernel // 2
    lead = (slice(None),) * (x.ndim - 2)
    padded = concat([x[lead + (slice(length - half, length),)], x,
                     x[lead + (slice(0, half),)]], axis=-2)
    out = None
    for k in range(kernel):
        term = matmul(padded[lead + (slice(k, k + length),)], weight[k])
        out = term if out is None else add(out, term)
    if bias is not None:
        out = add(out, bias)
    return out


# -- randomness ----------------------------------------------------------

def rng_for(*entropy: int) -> np.random.Generator:
    """Counter-based generator keyed by an integer tuple; fully deterministic."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def seeded_normal(shape, seed) -> np.ndarray:
    """Standard normal draw as a plain array, identical for identical seeds."""
    entropy = seed if isinstance(seed, (tuple, list)) else (seed,)
    return rng_for(*entropy).standard_normal(shape).astype(_DEFAULT_DTYPE)


def seeded_gaussian(shape, mu, sigma, seed) -> Tensor:
    """Reparameterized Gaussian sample ``mu + sigma * eta`` with frozen noise.

    The draw is differentiable through ``mu`` and ``sigma`` only; ``eta`` is a
    constant produced by a counter-based generator, so identical seeds give
    bit-identical samples.  Raises ValueError for negative ``sigma`` entries.
    """
    mu = ensure_tensor(mu)
    sigma = ensure_tensor(sigma)
    if np.any(sigma.data < 0):
        raise ValueError("seeded_gaussian requires non-negative sigma")
    eta = seeded_normal(shape, seed)
    return add(mu, mul(sigma, Tensor(eta)))


# -- gradient verification ----------------------------------------------

def gradient_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
                   step: float = 1e-5, max_entries_per_param: int | None = None,
                   entry_seed: int = 0) -> dict[str, float]:
    """Compare reverse-mode gradients against central finite differences.

    ``loss_fn`` must rebuild the full forward pass on every call and be
    deterministic; determinism is verified by two identical evaluations before
    any differencing.  Returns, for every parameter, the maximum over probed
    entries of ``|analytic - fd| / max(1, |fd|)``.  When a parameter has more
    entries than ``max_entries_per_param``, a seeded subset is probed.
    """
    params = list(params)
    if not params:
        return {}

    with no_grad():
        first = loss_fn()
        second = loss_fn()
    for val in (first, second):
        if not isinstance(val, Tensor) or val.size != 1:
            raise GraphError("loss_fn must return a scalar Tensor")
    if not np.array_equal(first.data, second.data):
        raise GraphError("loss_fn is not deterministic across identical evaluations")

    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = rng_for(entry_seed)
    report: dict[str, float] = {}
    with no_grad():
        for slot, p in enumerate(params):
            flat = p.data.reshape(-1)
            n = flat.size
            if max_entries_per_param is not None and n > max_entries_per_param:
                idx = rng.choice(n, size=max_entries_per_param, replace=False)
            else:
                idx = np.arange(n)
            worst = 0.0
            for i in idx:
                orig = flat[i]
                flat[i] = orig + step
                up = float(loss_fn().data)
                flat[i] = orig - step
                down = float(loss_fn().data)
                flat[i] = orig
                fd = (up - down) / (2.0 * step)
                an = analytic[slot].reshape(-1)[i]
                worst = max(worst, abs(an - fd) / max(1.0, abs(fd)))
            name = p.name or f"param{slot}"
            report[name] = worst
    return report
