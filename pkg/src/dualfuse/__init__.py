"""Multimodal dual-attention fusion of image and text embeddings for scene classification."""

from .data import EmbeddingDataset, SplitSpec, SyntheticConfig, generate_synthetic, load_dataset, save_dataset
from .fusion import FULL_SCALE, Dims, FusionModel, Variant
from .metrics import MetricsReport
from .models import build_model
from .training import TrainConfig, evaluate, train_model

__version__ = "0.1.0"

__all__ = [
    "Dims",
    "EmbeddingDataset",
    "FULL_SCALE",
    "FusionModel",
    "MetricsReport",
    "SplitSpec",
    "SyntheticConfig",
    "TrainConfig",
    "Variant",
    "build_model",
    "evaluate",
    "generate_synthetic",
    "load_dataset",
    "save_dataset",
    "train_model",
]
