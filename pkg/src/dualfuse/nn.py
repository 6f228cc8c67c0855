"""Parameterised layers and losses shared by every model."""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from .engine import Rng, Tensor, ops
from .errors import BadRateError, HeadsDontDivideError, ShapeMismatchError


def glorot_uniform(rng: Rng, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape, -limit, limit)


def parameter(data, name: str) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Container that discovers parameters from its attributes.

    Parameters are trainable tensors, sub-modules, or lists of sub-modules,
    visited in attribute definition order so names and ordering are stable.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        for name, p in self.named_parameters():
            arr = state[name]
            if arr.shape != p.shape:
                raise ShapeMismatchError(f"{name}: expected {p.shape}, got {arr.shape}")
            p.data = np.array(arr, dtype=p.dtype)


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[Rng]) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, rescale survivors."""
    if not 0.0 <= rate < 1.0:
        raise BadRateError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = rng.uniform24(x.shape) >= rate
    return ops.mul_mask(x, keep / (1.0 - rate))


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    return ops.cross_entropy(logits, labels)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: Rng, bias: bool = True):
        self.d_in, self.d_out = d_in, d_out
        self.W = parameter(glorot_uniform(rng, (d_in, d_out), d_in, d_out), "W")
        self.b = parameter(np.zeros(d_out), "b") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeMismatchError(f"Linear expects width {self.d_in}, got {x.shape}")
        y = ops.matmul(x, self.W)
        return ops.add_bias(y, self.b) if self.b is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.d, self.eps = d, eps
        self.gamma = parameter(np.ones(d), "gamma")
        self.beta = parameter(np.zeros(d), "beta")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


def layer_norm_forward(ln: LayerNorm, x: Tensor) -> Tensor:
    return ln(x)


class Mlp(Module):
    """``Linear(d, 2d) -> ReLU -> dropout -> Linear(2d, d)``."""

    def __init__(self, d: int, rng: Rng, dropout: float = 0.1):
        self.fc1 = Linear(d, 2 * d, rng)
        self.fc2 = Linear(2 * d, d, rng)
        self.dropout = dropout

    def __call__(self, x: Tensor, training: bool = False, rng: Optional[Rng] = None) -> Tensor:
        h = dropout(ops.relu(self.fc1(x)), self.dropout, training, rng)
        return self.fc2(h)


class MultiHeadCMA(Module):
    """Multi-head attention with queries from one sequence and keys/values from another.

    Per head ``j``: ``softmax(Q_j K_j^T / sqrt(d_head)) V_j`` with
    ``d_head = d_query / num_heads``; heads are concatenated back to
    ``d_query`` and passed through an output projection. Projections carry no
    bias. Inputs are ``(L, D)`` or batched ``(B, L, D)``.
    """

    def __init__(self, d_query: int, d_kv: int, rng: Rng, num_heads: int = 4, attn_dropout: float = 0.05):
        if num_heads <= 0 or d_query % num_heads:
            raise HeadsDontDivideError(f"{d_query} is not divisible by {num_heads} heads")
        self.d_query, self.d_kv, self.num_heads = d_query, d_kv, num_heads
        self.head_dim = d_query // num_heads
        self.attn_dropout = attn_dropout
        self.W_Q = parameter(glorot_uniform(rng, (d_query, d_query), d_query, d_query), "W_Q")
        self.W_K = parameter(glorot_uniform(rng, (d_kv, d_query), d_kv, d_query), "W_K")
        self.W_V = parameter(glorot_uniform(rng, (d_kv, d_query), d_kv, d_query), "W_V")
        self.W_O = parameter(glorot_uniform(rng, (d_query, d_query), d_query, d_query), "W_O")

    def _heads(self, x: Tensor) -> Tensor:
        b, length, _ = x.shape
        return ops.permute(ops.reshape(x, (b, length, self.num_heads, self.head_dim)), (0, 2, 1, 3))

    def _check(self, x_a: Tensor, x_b: Tensor) -> None:
        if x_a.ndim != x_b.ndim or x_a.ndim not in (2, 3):
            raise ShapeMismatchError(f"attention inputs must both be 2-D or 3-D: {x_a.shape}, {x_b.shape}")
        if x_a.shape[-1] != self.d_query or x_b.shape[-1] != self.d_kv:
            raise ShapeMismatchError(
                f"attention expects widths ({self.d_query}, {self.d_kv}), got {x_a.shape}, {x_b.shape}"
            )
        if x_a.ndim == 3 and x_a.shape[0] != x_b.shape[0]:
            raise ShapeMismatchError(f"batch sizes differ: {x_a.shape}, {x_b.shape}")

    def attention_weights(self, x_a: Tensor, x_b: Tensor) -> Tensor:
        """Post-softmax weights ``(B, heads, L_a, L_b)`` (no dropout)."""
        self._check(x_a, x_b)
        squeeze = x_a.ndim == 2
        if squeeze:
            x_a = ops.reshape(x_a, (1,) + x_a.shape)
            x_b = ops.reshape(x_b, (1,) + x_b.shape)
        q = self._heads(ops.matmul(x_a, self.W_Q))
        k = self._heads(ops.matmul(x_b, self.W_K))
        scores = ops.scale(ops.matmul(q, ops.transpose(k)), 1.0 / math.sqrt(self.head_dim))
        return ops.softmax_rows(scores)

    def __call__(self, x_a: Tensor, x_b: Tensor, training: bool = False, rng: Optional[Rng] = None) -> Tensor:
        self._check(x_a, x_b)
        squeeze = x_a.ndim == 2
        if squeeze:
            x_a = ops.reshape(x_a, (1,) + x_a.shape)
            x_b = ops.reshape(x_b, (1,) + x_b.shape)
        b, la, _ = x_a.shape
        weights = self.attention_weights(x_a, x_b)
        weights = dropout(weights, self.attn_dropout, training, rng)
        v = self._heads(ops.matmul(x_b, self.W_V))
        heads = ops.matmul(weights, v)  # (B, h, L_a, d_head)
        merged = ops.reshape(ops.permute(heads, (0, 2, 1, 3)), (b, la, self.d_query))
        out = ops.matmul(merged, self.W_O)
        return ops.reshape(out, out.shape[1:]) if squeeze else out


def cross_modal_attention(cma: MultiHeadCMA, x_a: Tensor, x_b: Tensor, training: bool = False,
                          rng: Optional[Rng] = None) -> Tensor:
    return cma(x_a, x_b, training, rng)


def self_attention(layer: MultiHeadCMA, x: Tensor, training: bool = False, rng: Optional[Rng] = None) -> Tensor:
    return layer(x, x, training, rng)


class Conv2d(Module):
    """Valid 2-D convolution over channels-last grids; no activation."""

    def __init__(self, in_channels: int, filters: int, kernel_size: int, rng: Rng, stride: int = 1):
        k = kernel_size
        self.kernel_size, self.stride = k, stride
        fan_in, fan_out = k * k * in_channels, k * k * filters
        self.W = parameter(glorot_uniform(rng, (k, k, in_channels, filters), fan_in, fan_out), "W")
        self.b = parameter(np.zeros(filters), "b")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.W, self.b, self.stride)


class Conv1d(Module):
    """Valid 1-D convolution over ``(B, L, C)`` sequences; no activation."""

    def __init__(self, in_channels: int, filters: int, kernel_size: int, rng: Rng, stride: int = 1):
        k = kernel_size
        self.kernel_size, self.stride = k, stride
        self.W = parameter(glorot_uniform(rng, (k, in_channels, filters), k * in_channels, k * filters), "W")
        self.b = parameter(np.zeros(filters), "b")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.W, self.b, self.stride)


def conv_forward(layer, x: Tensor) -> Tensor:
    return layer(x)


def maxpool_forward(x: Tensor, pool: int = 2) -> Tensor:
    """Max-pool a ``(B, L, C)`` sequence or a ``(B, H, W, C)`` grid."""
    if x.ndim == 3:
        return ops.maxpool1d(x, pool)
    return ops.maxpool2d(x, (pool, pool))
