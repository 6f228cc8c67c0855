"""Model registry: build any model from a selector or a saved config."""

from __future__ import annotations

from .baselines import CnnImageModel, CnnTextModel, EarlyFusionModel, LateFusionModel
from .errors import BadConfigError
from .fusion import Dims, FusionModel, Variant

BASELINES = {
    "io": CnnImageModel,
    "to": CnnTextModel,
    "ef": EarlyFusionModel,
    "lf": LateFusionModel,
}
MODEL_KINDS = ("fusion",) + tuple(BASELINES)


def build_model(kind: str, dims: Dims, num_classes: int, variant="full", seed: int = 0, **fusion_kwargs):
    kind = kind.lower()
    if kind == "fusion":
        return FusionModel(dims, num_classes, Variant.parse(variant), seed=seed, **fusion_kwargs)
    if kind in BASELINES:
        return BASELINES[kind](dims, num_classes, seed)
    raise BadConfigError(f"unknown model {kind!r}; expected one of {MODEL_KINDS}")


def model_from_config(cfg: dict):
    kind = cfg.get("kind")
    if kind == "fusion":
        return FusionModel.from_config(cfg)
    if kind in BASELINES:
        return BASELINES[kind].from_config(cfg)
    raise BadConfigError(f"unknown model kind {kind!r} in config")
