"""CNN reference models: image-only, text-only, early fusion and late fusion.

All models share the call signature of :class:`~dualfuse.fusion.FusionModel`:
``model(text, image, training, rng) -> logits`` on batched ``(B, L, D)``
embeddings, plus ``features(...)`` returning the 512-d penultimate activations.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .engine import Rng, Tensor, ops
from .engine.ops import conv_output_size
from .errors import KernelTooLargeError, PoolTooLargeError, ShapeMismatchError
from .fusion import Dims
from .nn import Conv1d, Conv2d, Linear, Module, parameter

KERNEL = 3
POOL = 2
DENSE_UNITS = (1024, 512)
IMAGE_FILTERS = (128, 256)
TEXT_FILTERS = (64, 128)


def trunk_shapes(spatial: tuple, filters: tuple, kernel: int = KERNEL, stride: int = 1, pool: int = POOL) -> list:
    """Shapes after each conv/pool stage, from the no-padding shape law.

    ``spatial`` is ``(H, W)`` for grids or ``(L,)`` for sequences. Returns a
    list of ``(stage, shape)`` pairs ending with ``("flatten", (n,))``.
    """
    dims = tuple(spatial)
    out = []
    for i, f in enumerate(filters, start=1):
        if any(d < kernel for d in dims):
            raise KernelTooLargeError(f"conv{i}: kernel {kernel} larger than input {dims}")
        dims = tuple(conv_output_size(d, kernel, stride) for d in dims)
        out.append((f"conv{i}", dims + (f,)))
        if any(d < pool for d in dims):
            raise PoolTooLargeError(f"pool{i}: pool {pool} larger than input {dims}")
        dims = tuple(d // pool for d in dims)
        out.append((f"pool{i}", dims + (f,)))
    out.append(("flatten", (int(np.prod(out[-1][1])),)))
    return out


class Dense(Module):
    """Flattened features -> 1024 -> 512, ReLU after both."""

    def __init__(self, d_in: int, rng: Rng):
        self.fc1 = Linear(d_in, DENSE_UNITS[0], rng)
        self.fc2 = Linear(DENSE_UNITS[0], DENSE_UNITS[1], rng)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(self.fc2(ops.relu(self.fc1(x))))


class Cnn2dTrunk(Module):
    """Treats an ``H x W`` embedding as a one-channel image."""

    def __init__(self, height: int, width: int, rng: Rng):
        self.height, self.width = height, width
        self.shapes = trunk_shapes((height, width), IMAGE_FILTERS)
        self.conv1 = Conv2d(1, IMAGE_FILTERS[0], KERNEL, rng)
        self.conv2 = Conv2d(IMAGE_FILTERS[0], IMAGE_FILTERS[1], KERNEL, rng)
        self.dense = Dense(self.shapes[-1][1][0], rng)

    def __call__(self, x: Tensor) -> Tensor:
        b = x.shape[0]
        h = ops.reshape(x, (b, self.height, self.width, 1))
        h = ops.maxpool2d(ops.relu(self.conv1(h)), (POOL, POOL))
        h = ops.maxpool2d(ops.relu(self.conv2(h)), (POOL, POOL))
        return self.dense(ops.reshape(h, (b, -1)))


class Cnn1dTrunk(Module):
    """Convolves along the sequence with the embedding width as channels."""

    def __init__(self, length: int, channels: int, rng: Rng):
        self.length, self.channels = length, channels
        self.shapes = trunk_shapes((length,), TEXT_FILTERS)
        self.conv1 = Conv1d(channels, TEXT_FILTERS[0], KERNEL, rng)
        self.conv2 = Conv1d(TEXT_FILTERS[0], TEXT_FILTERS[1], KERNEL, rng)
        self.dense = Dense(self.shapes[-1][1][0], rng)

    def __call__(self, x: Tensor) -> Tensor:
        b = x.shape[0]
        h = ops.maxpool1d(ops.relu(self.conv1(x)), POOL)
        h = ops.maxpool1d(ops.relu(self.conv2(h)), POOL)
        return self.dense(ops.reshape(h, (b, -1)))


class _Baseline(Module):
    kind = ""

    def __init__(self, dims: Dims, num_classes: int, seed: int = 0):
        self.dims = dims
        self.num_classes = num_classes
        self._seed = seed

    feature_dim = DENSE_UNITS[1]

    def config(self) -> dict:
        return {"kind": self.kind, "dims": self.dims.to_dict(), "num_classes": self.num_classes, "seed": self._seed}

    @classmethod
    def from_config(cls, cfg: dict):
        return cls(Dims(**cfg["dims"]), cfg["num_classes"], cfg.get("seed", 0))

    def _check(self, text: Optional[Tensor], image: Optional[Tensor]) -> None:
        d = self.dims
        if text is not None and tuple(text.shape[1:]) != (d.l_t, d.d_t):
            raise ShapeMismatchError(f"text input {text.shape} does not match {(d.l_t, d.d_t)}")
        if image is not None and tuple(image.shape[1:]) != (d.l_i, d.d_i):
            raise ShapeMismatchError(f"image input {image.shape} does not match {(d.l_i, d.d_i)}")

    def __call__(self, text: Tensor, image: Tensor, training: bool = False, rng: Optional[Rng] = None) -> Tensor:
        return self.classifier(self.features(text, image, training, rng))


class CnnImageModel(_Baseline):
    """Image-only (IO) baseline; the text input is ignored."""

    kind = "io"

    def __init__(self, dims: Dims, num_classes: int, seed: int = 0):
        super().__init__(dims, num_classes, seed)
        rng = Rng(seed, stream=1)
        self.trunk = Cnn2dTrunk(dims.l_i, dims.d_i, rng)
        self.classifier = Linear(DENSE_UNITS[1], num_classes, rng)

    def features(self, text, image, training=False, rng=None) -> Tensor:
        self._check(None, image)
        return self.trunk(image)


class CnnTextModel(_Baseline):
    """Text-only (TO) baseline; the image input is ignored."""

    kind = "to"

    def __init__(self, dims: Dims, num_classes: int, seed: int = 0):
        super().__init__(dims, num_classes, seed)
        rng = Rng(seed, stream=1)
        self.trunk = Cnn1dTrunk(dims.l_t, dims.d_t, rng)
        self.classifier = Linear(DENSE_UNITS[1], num_classes, rng)

    def features(self, text, image, training=False, rng=None) -> Tensor:
        self._check(text, None)
        return self.trunk(text)


class EarlyFusionModel(_Baseline):
    """Project image rows to the text width, stack both sequences, run the 2-D trunk."""

    kind = "ef"

    def __init__(self, dims: Dims, num_classes: int, seed: int = 0):
        super().__init__(dims, num_classes, seed)
        rng = Rng(seed, stream=1)
        self.projection = Linear(dims.d_i, dims.d_t, rng)
        self.trunk = Cnn2dTrunk(dims.l_i + dims.l_t, dims.d_t, rng)
        self.classifier = Linear(DENSE_UNITS[1], num_classes, rng)

    def fuse(self, text: Tensor, image: Tensor) -> Tensor:
        """``(B, L_i + L_t, D_t)``: projected image rows followed by text rows."""
        self._check(text, image)
        return ops.concat([self.projection(image), text], axis=1)

    def features(self, text, image, training=False, rng=None) -> Tensor:
        return self.trunk(self.fuse(text, image))


class LateFusionModel(_Baseline):
    """Separate trunks; ``f = alpha * f_image + beta * f_text`` feeds a shared classifier."""

    kind = "lf"

    def __init__(self, dims: Dims, num_classes: int, seed: int = 0):
        super().__init__(dims, num_classes, seed)
        rng = Rng(seed, stream=1)
        self.image_trunk = Cnn2dTrunk(dims.l_i, dims.d_i, rng)
        self.text_trunk = Cnn1dTrunk(dims.l_t, dims.d_t, rng)
        self.alpha = parameter(np.array([0.5]), "alpha")
        self.beta = parameter(np.array([0.5]), "beta")
        self.classifier = Linear(DENSE_UNITS[1], num_classes, rng)

    def branch_features(self, text: Tensor, image: Tensor) -> tuple:
        self._check(text, image)
        return self.image_trunk(image), self.text_trunk(text)

    def features(self, text, image, training=False, rng=None) -> Tensor:
        f_image, f_text = self.branch_features(text, image)
        return ops.add(ops.mul_scalar(f_image, self.alpha), ops.mul_scalar(f_text, self.beta))


def io_forward(model: CnnImageModel, image: Tensor, training: bool = False) -> Tensor:
    return model(None, image, training)


def to_forward(model: CnnTextModel, text: Tensor, training: bool = False) -> Tensor:
    return model(text, None, training)


def early_fusion_forward(model: EarlyFusionModel, text: Tensor, image: Tensor, training: bool = False) -> Tensor:
    return model(text, image, training)


def late_fusion_forward(model: LateFusionModel, text: Tensor, image: Tensor, training: bool = False) -> Tensor:
    return model(text, image, training)
