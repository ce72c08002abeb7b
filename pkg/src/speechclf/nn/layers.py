"""Differentiable layers shared by the text, audio and fusion models."""

from __future__ import annotations

import numpy as np

from .tensor import (
    ShapeMismatch,
    Tensor,
    add,
    check_finite,
    gelu,
    matmul,
    mul,
    power,
    relu,
    reduce_mean,
    reshape,
    softmax,
    sub,
    tanh,
    transpose,
)

__all__ = [
    "Dense",
    "LayerNorm",
    "Dropout",
    "MultiHeadAttention",
    "layer_norm",
    "relu",
    "gelu",
    "tanh",
    "softmax",
]

ATTENTION_MASK_FILL = -1e9


class Dense:
    """Affine map ``x @ w + b`` on the last axis."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 init_std: float = 0.02, bias: bool = True):
        self.d_in = d_in
        self.d_out = d_out
        self.w = Tensor(rng.normal(0.0, init_std, (d_in, d_out)), requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeMismatch(f"dense: input width {x.shape[-1]}, expected {self.d_in}")
        out = matmul(x, self.w)
        if self.b is not None:
            out = add(out, self.b)
        check_finite(out.data, "dense output")
        return out

    def parameters(self) -> list[Tensor]:
        return [self.w] if self.b is None else [self.w, self.b]


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (pre scale/shift).

    A constant row normalizes to all zeros thanks to the eps variance floor.
    """
    check_finite(x.data, "layer_norm input")
    mu = reduce_mean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = reduce_mean(mul(centered, centered), axis=-1, keepdims=True)
    inv = power(add(var, Tensor(eps)), -0.5)
    return mul(centered, inv)


class LayerNorm:
    def __init__(self, dim: int, eps: float = 1e-5):
        self.dim = dim
        self.eps = eps
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise ShapeMismatch(f"layer_norm: width {x.shape[-1]}, expected {self.dim}")
        return add(mul(layer_norm(x, self.eps), self.gamma), self.beta)

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]


class Dropout:
    """Inverted dropout; identity at rate 0 and whenever ``training`` is off."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1): {rate}")
        self.rate = rate

    def __call__(self, x: Tensor, rng: np.random.Generator | None,
                 training: bool) -> Tensor:
        if not training or self.rate == 0.0:
            return x
        if rng is None:
            raise ValueError("dropout in training mode needs an rng")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return mul(x, Tensor(mask))


class MultiHeadAttention:
    """Scaled dot-product self-attention over (batch, seq, d_model) inputs.

    ``key_mask`` marks real (non-padding) positions; padded keys receive a
    large negative additive bias before the softmax so their weight is ~0.
    The most recent attention weights are kept on ``last_weights`` for
    inspection.
    """

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator,
                 init_std: float = 0.02):
        if d_model % heads != 0:
            raise ShapeMismatch(f"d_model {d_model} not divisible by {heads} heads")
        self.d_model = d_model
        self.heads = heads
        self.d_head = d_model // heads
        self.wq = Dense(d_model, d_model, rng, init_std)
        self.wk = Dense(d_model, d_model, rng, init_std)
        self.wv = Dense(d_model, d_model, rng, init_std)
        self.wo = Dense(d_model, d_model, rng, init_std)
        self.last_weights: np.ndarray | None = None

    def _split_heads(self, x: Tensor, batch: int, seq: int) -> Tensor:
        x = reshape(x, (batch, seq, self.heads, self.d_head))
        return transpose(x, (0, 2, 1, 3))

    def __call__(self, x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        batch, seq, _ = x.shape
        q = self._split_heads(self.wq(x), batch, seq)
        k = self._split_heads(self.wk(x), batch, seq)
        v = self._split_heads(self.wv(x), batch, seq)
        scores = matmul(q, transpose(k, (0, 1, 3, 2)))
        scores = mul(scores, Tensor(1.0 / np.sqrt(self.d_head)))
        if key_mask is not None:
            bias = np.where(key_mask, 0.0, ATTENTION_MASK_FILL)
            scores = add(scores, Tensor(bias[:, None, None, :]))
        weights = softmax(scores, axis=-1)
        self.last_weights = weights.data
        context = matmul(weights, v)
        context = reshape(transpose(context, (0, 2, 1, 3)), (batch, seq, self.d_model))
        out = self.wo(context)
        check_finite(out.data, "attention output")
        return out

    def parameters(self) -> list[Tensor]:
        return (self.wq.parameters() + self.wk.parameters()
                + self.wv.parameters() + self.wo.parameters())
