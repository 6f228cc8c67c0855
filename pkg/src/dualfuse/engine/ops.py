"""Differentiable primitives.

Shapes must match exactly. The documented exceptions are:

* ``matmul`` with a 2-D right operand applies one weight to every leading
  batch index of the left operand;
* ``add_bias`` / ``mul_vector`` broadcast a vector over the last axis;
* ``mul_scalar`` multiplies by a one-element tensor.

Every op returns a new :class:`Tensor`; inputs are never modified.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import (
    KernelTooLargeError,
    LabelOutOfRangeError,
    PoolTooLargeError,
    ShapeMismatchError,
)
from .tensor import Tensor, make_output, note_branch


def _same_shape(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{kind}: shapes {a.shape} and {b.shape} differ")


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for ``a: (..., m, k)`` and ``b: (k, n)`` or ``b: (..., k, n)``."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(f"matmul needs >= 2-D operands, got {a.shape}, {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatchError(f"matmul batch dims differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd
    shared = bd.ndim == 2

    def backward(g):
        ga = g @ _swap(bd)
        if shared:
            k, n = bd.shape
            gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = _swap(ad) @ g
        return ga, gb

    return make_output("matmul", (a, b), out, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)

    def backward(g):
        return g, g

    return make_output("add", (a, b), a.data + b.data, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)

    def backward(g):
        return g, -g

    return make_output("sub", (a, b), a.data - b.data, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return g * bd, g * ad

    return make_output("mul", (a, b), ad * bd, backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return (g * c,)

    return make_output("scale", (x,), x.data * x.data.dtype.type(c), backward)


def mul_mask(x: Tensor, mask: np.ndarray) -> Tensor:
    """Elementwise product with a constant array (dropout masks)."""
    if mask.shape != x.shape:
        raise ShapeMismatchError(f"mask shape {mask.shape} != {x.shape}")
    mask = mask.astype(x.dtype, copy=False)

    def backward(g):
        return (g * mask,)

    return make_output("mul_mask", (x,), x.data * mask, backward)


def _reduce_to_last(g: np.ndarray) -> np.ndarray:
    return g.reshape(-1, g.shape[-1]).sum(axis=0)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a ``(n,)`` vector to every row of ``x: (..., n)``."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeMismatchError(f"bias {b.shape} does not fit {x.shape}")

    def backward(g):
        return g, _reduce_to_last(g)

    return make_output("add_bias", (x, b), x.data + b.data, backward)


def mul_vector(x: Tensor, v: Tensor) -> Tensor:
    """Scale each column of ``x: (..., n)`` by ``v: (n,)``."""
    if v.ndim != 1 or x.shape[-1] != v.shape[0]:
        raise ShapeMismatchError(f"vector {v.shape} does not fit {x.shape}")
    xd, vd = x.data, v.data

    def backward(g):
        return g * vd, _reduce_to_last(g * xd)

    return make_output("mul_vector", (x, v), xd * vd, backward)


def mul_scalar(x: Tensor, s: Tensor) -> Tensor:
    """``x * s`` for a one-element tensor ``s`` (trainable scalar gates)."""
    if s.size != 1:
        raise ShapeMismatchError(f"scalar operand must have one element, got {s.shape}")
    xd, sd = x.data, s.data

    def backward(g):
        return g * sd.reshape(()), np.asarray(np.sum(g * xd)).reshape(sd.shape)

    return make_output("mul_scalar", (x, s), xd * sd.reshape(()), backward)


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    note_branch(positive)

    def backward(g):
        return (g * positive,)

    return make_output("relu", (x,), np.where(positive, x.data, 0).astype(x.dtype), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return make_output("softmax_rows", (x,), y, backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each row of ``x: (..., d)`` then apply ``gamma``/``beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatchError(f"layer_norm params {gamma.shape}/{beta.shape} vs width {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    gd = gamma.data

    def backward(g):
        g_gamma = _reduce_to_last(g * xhat)
        g_beta = _reduce_to_last(g)
        gx_hat = g * gd
        gx = inv_std * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * np.mean(gx_hat * xhat, axis=-1, keepdims=True)
        )
        return gx, g_gamma, g_beta

    out = (xhat * gd + beta.data).astype(xd.dtype, copy=False)
    return make_output("layer_norm", (x, gamma, beta), out, backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    out = x.data.reshape(tuple(shape))

    def backward(g):
        return (g.reshape(src),)

    return make_output("reshape", (x,), out, backward)


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(np.transpose(g, inverse)),)

    return make_output("permute", (x,), np.ascontiguousarray(np.transpose(x.data, axes)), backward)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(x, axes)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise ShapeMismatchError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    out = np.concatenate([t.data for t in tensors], axis=ax)
    return make_output("concat", tensors, out, backward)


def mean(x: Tensor, axis: int) -> Tensor:
    """Mean over one axis (the axis is removed)."""
    ax = axis % x.ndim
    n = x.shape[ax]
    src = x.shape

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, ax) / n, src).copy(),)

    return make_output("mean", (x,), x.data.mean(axis=ax), backward)


def sum_all(x: Tensor) -> Tensor:
    src = x.shape

    def backward(g):
        return (np.full(src, g.reshape(()), dtype=g.dtype),)

    return make_output("sum_all", (x,), np.asarray(x.data.sum(), dtype=x.dtype).reshape(()), backward)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Divide each row of ``x`` by ``||row|| + eps``."""
    xd = x.data
    norm = np.sqrt(np.sum(xd * xd, axis=-1, keepdims=True))
    denom = norm + eps
    y = xd / denom

    def backward(g):
        dot = np.sum(g * xd, axis=-1, keepdims=True)
        safe = np.where(norm > 0, norm, 1.0)
        corr = np.where(norm > 0, dot / (denom * denom * safe), 0.0)
        return (g / denom - xd * corr,)

    return make_output("l2_normalize", (x,), y, backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatchError(f"logits {logits.shape} vs labels {labels.shape}")
    b, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise LabelOutOfRangeError(f"labels must lie in [0, {c})")
    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(b)
    loss = -logp[rows, labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (g.reshape(()) / b),)

    return make_output("cross_entropy", (logits,), np.asarray(loss, dtype=z.dtype), backward)


# --- convolution and pooling (channels-last) -------------------------------


def conv_output_size(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Valid 2-D convolution. ``x: (B, H, W, C)``, ``w: (kh, kw, C, F)``, ``b: (F,)``."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatchError(f"conv2d expects 4-D input and kernel, got {x.shape}, {w.shape}")
    bsz, h, wid, c = x.shape
    kh, kw, cin, f = w.shape
    if cin != c or b.shape != (f,):
        raise ShapeMismatchError(f"conv2d channel mismatch: input {x.shape}, kernel {w.shape}")
    if h < kh or wid < kw:
        raise KernelTooLargeError(f"kernel {kh}x{kw} larger than input {h}x{wid}")
    ho = conv_output_size(h, kh, stride)
    wo = conv_output_size(wid, kw, stride)
    xd = x.data
    win = sliding_window_view(xd, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    # (B, ho, wo, C, kh, kw) -> (B, ho, wo, kh, kw, C)
    cols = np.ascontiguousarray(win[:, :ho, :wo].transpose(0, 1, 2, 4, 5, 3)).reshape(-1, kh * kw * c)
    wmat = w.data.reshape(kh * kw * c, f)
    out = (cols @ wmat + b.data).reshape(bsz, ho, wo, f)

    def backward(g):
        g2 = g.reshape(-1, f)
        gw = (cols.T @ g2).reshape(kh, kw, c, f)
        gb = g2.sum(axis=0)
        gcols = (g2 @ wmat.T).reshape(bsz, ho, wo, kh, kw, c)
        gx = np.zeros_like(xd)
        for i in range(kh):
            for j in range(kw):
                gx[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += gcols[:, :, :, i, j, :]
        return gx, gw, gb

    return make_output("conv2d", (x, w, b), out, backward)


def maxpool2d(x: Tensor, pool: tuple) -> Tensor:
    """Non-overlapping max pooling over axes 1, 2 of ``(B, H, W, C)``.

    Trailing rows/columns that do not fill a window are dropped. The backward
    pass routes each window's gradient to its first maximal element.
    """
    ph, pw = pool
    bsz, h, wid, c = x.shape
    if h < ph or wid < pw:
        raise PoolTooLargeError(f"pool {ph}x{pw} larger than input {h}x{wid}")
    ho, wo = h // ph, wid // pw
    xd = x.data
    blocks = xd[:, : ho * ph, : wo * pw, :].reshape(bsz, ho, ph, wo, pw, c)
    blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(bsz, ho, wo, c, ph * pw)
    arg = blocks.argmax(axis=-1)
    note_branch(arg)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gblocks = np.zeros((bsz, ho, wo, c, ph * pw), dtype=g.dtype)
        np.put_along_axis(gblocks, arg[..., None], g[..., None], axis=-1)
        gblocks = gblocks.reshape(bsz, ho, wo, c, ph, pw).transpose(0, 1, 4, 2, 5, 3)
        gx = np.zeros_like(xd)
        gx[:, : ho * ph, : wo * pw, :] = gblocks.reshape(bsz, ho * ph, wo * pw, c)
        return (gx,)

    return make_output("maxpool2d", (x,), np.ascontiguousarray(out), backward)


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Valid 1-D convolution. ``x: (B, L, C)``, ``w: (k, C, F)``, ``b: (F,)``."""
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeMismatchError(f"conv1d expects 3-D input and kernel, got {x.shape}, {w.shape}")
    bsz, length, c = x.shape
    k, _, f = w.shape
    if length < k:
        raise KernelTooLargeError(f"kernel {k} larger than input length {length}")
    y = conv2d(reshape(x, (bsz, 1, length, c)), reshape(w, (1, k, c, f)), b, stride)
    return reshape(y, (bsz, y.shape[2], f))


def maxpool1d(x: Tensor, pool: int) -> Tensor:
    """Non-overlapping max pooling over axis 1 of ``(B, L, C)``."""
    bsz, length, c = x.shape
    if length < pool:
        raise PoolTooLargeError(f"pool {pool} larger than input length {length}")
    y = maxpool2d(reshape(x, (bsz, 1, length, c)), (1, pool))
    return reshape(y, (bsz, y.shape[2], c))
