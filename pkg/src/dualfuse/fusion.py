"""Multimodal dual-attention encoder, prediction head and ablation variants."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional

from .engine import Rng, Tensor, ops
from .errors import ShapeMismatchError, UnknownVariantError
from .nn import LayerNorm, Linear, Mlp, Module, MultiHeadCMA, dropout


@dataclass(frozen=True)
class Dims:
    """Sequence lengths and widths of the image and text embeddings."""

    l_i: int
    d_i: int
    l_t: int
    d_t: int

    def to_dict(self) -> dict:
        return asdict(self)


FULL_SCALE = Dims(l_i=197, d_i=768, l_t=77, d_t=512)


class Variant(str, Enum):
    FULL = "full"
    NOCATT = "nocatt"
    ICATT = "icatt"
    TCATT = "tcatt"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise UnknownVariantError(f"unknown variant {value!r}") from None

    @property
    def text_to_image(self) -> bool:
        """Text stream queries the image stream."""
        return self in (Variant.FULL, Variant.TCATT)

    @property
    def image_to_text(self) -> bool:
        """Image stream queries the text stream."""
        return self in (Variant.FULL, Variant.ICATT)


class DualAttentionLayer(Module):
    """One encoder layer.

    Full variant, for text ``X_t`` and image ``X_i``::

        S    = SelfAttn(X_t)
        Xt'  = CMA_t2i(S, X_i)
        Xt^  = LN(drop(Xt') + S)
        Xi'  = CMA_i2t(X_i, MLP(Xt'))
        Xi^  = LN(drop(Xi') + X_i)

    Without text-to-image attention the text stream is ``LN(drop(S) + X_t)``;
    without image-to-text attention ``Xi'`` comes from image self-attention.
    The MLP exists only in the full variant. ICAtt's image stream attends to
    ``S`` directly.
    """

    def __init__(self, d_t: int, d_i: int, rng: Rng, variant=Variant.FULL, num_heads: int = 4,
                 attn_dropout: float = 0.05, dropout: float = 0.1):
        self.variant = Variant.parse(variant)
        self.d_t, self.d_i = d_t, d_i
        self.dropout = dropout
        v = self.variant
        self.text_self_attn = MultiHeadCMA(d_t, d_t, rng, num_heads, attn_dropout)
        self.t2i_cma = MultiHeadCMA(d_t, d_i, rng, num_heads, attn_dropout) if v.text_to_image else None
        self.text_ln = LayerNorm(d_t)
        self.mlp = Mlp(d_t, rng, dropout) if v is Variant.FULL else None
        if v.image_to_text:
            self.i2t_cma = MultiHeadCMA(d_i, d_t, rng, num_heads, attn_dropout)
            self.image_self_attn = None
        else:
            self.i2t_cma = None
            self.image_self_attn = MultiHeadCMA(d_i, d_i, rng, num_heads, attn_dropout)
        self.image_ln = LayerNorm(d_i)

    def __call__(self, x_t: Tensor, x_i: Tensor, training: bool = False, rng: Optional[Rng] = None):
        if x_t.shape[-1] != self.d_t or x_i.shape[-1] != self.d_i:
            raise ShapeMismatchError(
                f"layer expects widths (text {self.d_t}, image {self.d_i}), got {x_t.shape}, {x_i.shape}"
            )
        s = self.text_self_attn(x_t, x_t, training, rng)
        if self.t2i_cma is not None:
            xt_dot = self.t2i_cma(s, x_i, training, rng)
            xt_hat = self.text_ln(ops.add(dropout(xt_dot, self.dropout, training, rng), s))
        else:
            xt_dot = s
            xt_hat = self.text_ln(ops.add(dropout(s, self.dropout, training, rng), x_t))
        if self.i2t_cma is not None:
            kv = self.mlp(xt_dot, training, rng) if self.mlp is not None else xt_dot
            xi_dot = self.i2t_cma(x_i, kv, training, rng)
        else:
            xi_dot = self.image_self_attn(x_i, x_i, training, rng)
        xi_hat = self.image_ln(ops.add(dropout(xi_dot, self.dropout, training, rng), x_i))
        return xt_hat, xi_hat


def dual_attention_layer_forward(layer: DualAttentionLayer, x_t: Tensor, x_i: Tensor,
                                 training: bool = False, rng: Optional[Rng] = None):
    return layer(x_t, x_i, training, rng)


class DualAttentionEncoder(Module):
    def __init__(self, layers: list, variant=Variant.FULL):
        self.variant = Variant.parse(variant)
        self.layers = list(layers)

    def __call__(self, x_t: Tensor, x_i: Tensor, training: bool = False, rng: Optional[Rng] = None):
        for layer in self.layers:
            x_t, x_i = layer(x_t, x_i, training, rng)
        return x_t, x_i


def encoder_forward(enc: DualAttentionEncoder, text: Tensor, image: Tensor,
                    training: bool = False, rng: Optional[Rng] = None):
    return enc(text, image, training, rng)


def build_variant(variant, dims: Dims, rng: Rng, num_layers: int = 2, num_heads: int = 4,
                  attn_dropout: float = 0.05, dropout: float = 0.1) -> DualAttentionEncoder:
    variant = Variant.parse(variant)
    layers = [
        DualAttentionLayer(dims.d_t, dims.d_i, rng, variant, num_heads, attn_dropout, dropout)
        for _ in range(num_layers)
    ]
    return DualAttentionEncoder(layers, variant)


def mean_pool_concat(x_t: Tensor, x_i: Tensor) -> Tensor:
    """Mean over the sequence axis of each stream, text first then image."""
    return ops.concat([ops.mean(x_t, axis=-2), ops.mean(x_i, axis=-2)], axis=-1)


class PredictionHead(Module):
    def __init__(self, d_in: int, num_classes: int, rng: Rng, hidden: int = 512):
        self.hidden = Linear(d_in, hidden, rng)
        self.classifier = Linear(hidden, num_classes, rng)

    def __call__(self, pooled: Tensor) -> Tensor:
        return self.classifier(ops.relu(self.hidden(pooled)))


class FusionModel(Module):
    """Dual-attention encoder followed by mean-pool, concat and a two-layer head."""

    kind = "fusion"

    def __init__(self, dims: Dims, num_classes: int, variant=Variant.FULL, num_layers: int = 2,
                 num_heads: int = 4, hidden: int = 512, attn_dropout: float = 0.05,
                 dropout: float = 0.1, seed: int = 0):
        self.dims = dims
        self.num_classes = num_classes
        self.variant = Variant.parse(variant)
        self._config = dict(
            dims=dims.to_dict(), num_classes=num_classes, variant=self.variant.value,
            num_layers=num_layers, num_heads=num_heads, hidden=hidden,
            attn_dropout=attn_dropout, dropout=dropout, seed=seed,
        )
        rng = Rng(seed, stream=1)
        self.encoder = build_variant(self.variant, dims, rng, num_layers, num_heads, attn_dropout, dropout)
        self.head = PredictionHead(dims.d_t + dims.d_i, num_classes, rng, hidden)

    @property
    def feature_dim(self) -> int:
        return self.dims.d_t + self.dims.d_i

    def config(self) -> dict:
        return {"kind": self.kind, **self._config}

    @classmethod
    def from_config(cls, cfg: dict) -> "FusionModel":
        cfg = dict(cfg)
        cfg.pop("kind", None)
        cfg["dims"] = Dims(**cfg["dims"])
        return cls(**cfg)

    def _check(self, text: Tensor, image: Tensor) -> None:
        d = self.dims
        if text.shape[-2:] != (d.l_t, d.d_t) or image.shape[-2:] != (d.l_i, d.d_i):
            raise ShapeMismatchError(
                f"model built for text {(d.l_t, d.d_t)} / image {(d.l_i, d.d_i)}, "
                f"got {text.shape} / {image.shape}"
            )

    def features(self, text: Tensor, image: Tensor, training: bool = False, rng: Optional[Rng] = None) -> Tensor:
        """Pooled ``(B, d_t + d_i)`` representation consumed by the head."""
        self._check(text, image)
        x_t, x_i = self.encoder(text, image, training, rng)
        return mean_pool_concat(x_t, x_i)

    def __call__(self, text: Tensor, image: Tensor, training: bool = False, rng: Optional[Rng] = None) -> Tensor:
        return self.head(self.features(text, image, training, rng))


def fusion_predict(model: FusionModel, text: Tensor, image: Tensor, training: bool = False,
                   rng: Optional[Rng] = None) -> Tensor:
    """Logits ``(C,)`` for one sample or ``(B, C)`` for a batch."""
    if text.ndim == 2:
        logits = model(ops.reshape(text, (1,) + text.shape), ops.reshape(image, (1,) + image.shape), training, rng)
        return ops.reshape(logits, (model.num_classes,))
    return model(text, image, training, rng)
