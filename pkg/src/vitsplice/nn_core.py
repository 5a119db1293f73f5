"""Minimal reverse-mode autodiff over float64 numpy arrays.

Only the operations needed by the reconstruction transformer are provided:
affine maps, layer normalization, softmax, GELU, logistic squashing,
Linformer attention, a two-layer MLP and the smoothed-L1 loss.  Every
operation records a closure computing its exact adjoint; ``Tensor.backward``
walks the recorded graph in reverse topological order.

Random draws use ``numpy.random.Philox`` (a counter-based generator whose
stream is fixed across platforms for a given seed).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erf, expit

from .errors import ConfigError, GraphStateError, ShapeError

RNG_ALGORITHM = "numpy-philox4x64-10"

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An array node in the autodiff graph."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, _op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], None] | None = _backward
        self._op = _op

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def _accumulate(self, g: np.ndarray):
        if not self.requires_grad:
            return
        g = _unbroadcast(g, self.shape)
        self.grad = g if self.grad is None else self.grad + g

    def backward(self):
        """Populate ``.grad`` of every tensor that contributed to this scalar.

        The recorded graph is released afterwards, so calling backward twice
        on the same result raises :class:`GraphStateError`.
        """
        if self._backward is None:
            raise GraphStateError("backward() called on a tensor with no recorded forward graph")
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in order:
            node._parents = ()
            node._backward = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a1: int, a2: int):
        return swapaxes(self, a1, a2)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


class Parameter(Tensor):
    """A learnable leaf tensor whose gradient is allocated up front."""

    def __init__(self, data):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter(shape={self.shape})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, rg, _parents=tuple(parents) if rg else (), _backward=backward if rg else None, _op=op)


# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(g)
        b._accumulate(g)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(g)
        b._accumulate(-g)

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)

    return _node(a.data * b.data, (a, b), backward, "mul")


def matmul(a, b) -> Tensor:
    """Batched matrix product; both operands must be at least 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b._accumulate(np.swapaxes(a.data, -1, -2) @ g)

    return _node(a.data @ b.data, (a, b), backward, "matmul")


# structural ops


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), backward, "reshape")


def swapaxes(a: Tensor, a1: int, a2: int) -> Tensor:
    def backward(g):
        a._accumulate(np.swapaxes(g, a1, a2))

    return _node(np.swapaxes(a.data, a1, a2), (a,), backward, "swapaxes")


def getitem(a: Tensor, idx) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _node(a.data[idx], (a,), backward, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        for t, piece in zip(ts, np.split(g, sizes, axis=axis)):
            t._accumulate(piece)

    return _node(np.concatenate([t.data for t in ts], axis=axis), ts, backward, "concat")


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


# layers


def linear(x, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``y[..., j] = sum_m x[..., m] * W[j, m] + b[j]``."""
    x = as_tensor(x)
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {W.shape}")
    # flatten leading dims so BLAS sees one GEMM
    x2 = x.data.reshape(-1, x.shape[-1])
    y = x2 @ W.data.T
    if b is not None:
        y += b.data
    y = y.reshape(*x.shape[:-1], W.shape[0])

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad:
            x._accumulate((g2 @ W.data).reshape(x.shape))
        if W.requires_grad:
            W._accumulate(g2.T @ x2)
        if b is not None:
            b._accumulate(g2.sum(axis=0))

    parents = (x, W) if b is None else (x, W, b)
    return _node(y, parents, backward, "linear")


def layer_norm(x, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis using the population variance."""
    x = as_tensor(x)
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: gamma/beta must have shape ({x.shape[-1]},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    y = gamma.data * xhat + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gh = g * gamma.data
            x._accumulate(
                inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            )

    return _node(y, (x, gamma, beta), backward, "layer_norm")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _node(y, (x,), backward, "softmax")


def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        x._accumulate(g * (cdf + x.data * pdf))

    return _node(x.data * cdf, (x,), backward, "gelu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = expit(x.data)

    def backward(g):
        x._accumulate(g * y * (1.0 - y))

    return _node(y, (x,), backward, "sigmoid")


def smoothed_l1(image, recon) -> Tensor:
    """Mean over elements of ``d**2 / 2`` if ``|d| < 1`` else ``|d| - 1/2``."""
    a, b = as_tensor(image), as_tensor(recon)
    if a.shape != b.shape:
        raise ShapeError(f"smoothed_l1: shapes differ {a.shape} vs {b.shape}")
    if a.data.size == 0:
        raise ShapeError("smoothed_l1 of empty tensors")
    d = a.data - b.data
    ad = np.abs(d)
    quad = ad < 1.0
    per = np.where(quad, 0.5 * d * d, ad - 0.5)
    n = d.size

    def backward(g):
        slope = np.where(quad, d, np.sign(d)) * (g / n)
        a._accumulate(slope)
        b._accumulate(-slope)

    return _node(per.sum() / n, (a, b), backward, "smoothed_l1")


@dataclass(frozen=True)
class AttentionConfig:
    model_dim: int
    heads: int
    seq_len: int
    proj_dim: int

    def __post_init__(self):
        if self.model_dim <= 0 or self.heads <= 0 or self.seq_len <= 0:
            raise ConfigError("attention dimensions must be positive")
        if self.model_dim % self.heads:
            raise ConfigError(f"heads={self.heads} does not divide model_dim={self.model_dim}")
        if not 1 <= self.proj_dim <= self.seq_len:
            raise ConfigError(f"proj_dim k={self.proj_dim} must satisfy 1 <= k <= seq_len={self.seq_len}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads


@dataclass
class AttentionWeights:
    """Q/K/V/output projections (all heads packed) and the sequence maps E, F."""

    wq: Parameter
    bq: Parameter
    wk: Parameter
    bk: Parameter
    wv: Parameter
    bv: Parameter
    wo: Parameter
    bo: Parameter
    E: Parameter
    F: Parameter


@dataclass
class MLPWeights:
    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter


def _split_heads(t: Tensor, heads: int) -> Tensor:
    *lead, n, d = t.shape
    return t.reshape(*lead, n, heads, d // heads).swapaxes(-3, -2)


def _merge_heads(t: Tensor) -> Tensor:
    *lead, h, n, dh = t.shape
    return t.swapaxes(-3, -2).reshape(*lead, n, h * dh)


def linformer_attention(x, w: AttentionWeights, cfg: AttentionConfig) -> Tensor:
    """Multi-head attention with keys and values projected along the sequence.

    ``x`` has shape ``(..., n, D)``.  For each head the keys and values are
    compressed from length ``n`` to ``k`` by ``E`` and ``F`` (shape ``k x n``)
    before the scaled dot product.  With ``k == n`` and identity maps this is
    ordinary scaled dot-product attention.
    """
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-2] != cfg.seq_len or x.shape[-1] != cfg.model_dim:
        raise ShapeError(f"attention input {x.shape} does not match (seq_len={cfg.seq_len}, D={cfg.model_dim})")
    if w.E.shape != (cfg.proj_dim, cfg.seq_len) or w.F.shape != (cfg.proj_dim, cfg.seq_len):
        raise ShapeError(f"E/F must have shape ({cfg.proj_dim}, {cfg.seq_len})")
    q = _split_heads(linear(x, w.wq, w.bq), cfg.heads)
    k = matmul(w.E, _split_heads(linear(x, w.wk, w.bk), cfg.heads))
    v = matmul(w.F, _split_heads(linear(x, w.wv, w.bv), cfg.heads))
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / np.sqrt(cfg.head_dim))
    out = _merge_heads(matmul(softmax(scores, axis=-1), v))
    return linear(out, w.wo, w.bo)


def mlp_forward(x, w: MLPWeights) -> Tensor:
    return linear(gelu(linear(x, w.w1, w.b1)), w.w2, w.b2)


# optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")
        if self.lr <= 0 or self.eps <= 0:
            raise ConfigError("Adam lr and eps must be positive")


def adam_step(params: Mapping[str, Parameter], state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place, then zero the gradients."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        denom = np.sqrt(v / c2)
        denom += state.eps
        p.data -= (state.lr / c1) * m / denom
        p.zero_grad()


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


# random initialization


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator with a platform-independent stream."""
    return np.random.Generator(np.random.Philox(int(seed)))


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) draws, redrawing any value outside +-bound*std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std
