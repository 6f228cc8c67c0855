"""Zero-shot classification on top of a frozen, headless backbone.

Training pulls each known-class sample's projected backbone feature towards
its class's projected attribute vector: logits are cosine similarities
divided by a fixed temperature, optimised with cross-entropy over the known
classes. Inference picks the most similar attribute among candidate
(unknown) classes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import F32LE, EmbeddingDataset, Splits, read_exact, read_manifest
from .engine import Rng, Tape, Tensor, no_grad, ops
from .errors import (
    BackboneMutatedError,
    EmptyCandidatesError,
    RatioMismatchError,
    ShapeMismatchError,
    ShapeMismatchWithManifestError,
)
from .nn import Linear, Module
from .training import AdamState, TrainConfig, adam_step, clip_gradients, train_model

TEMPERATURE = 0.07
DEFAULT_RATIOS = ("25/5", "20/10", "15/15")


@dataclass
class AttributeSet:
    """One precomputed attribute vector per class."""

    embeddings: np.ndarray  # (C, D_attr)
    class_names: list

    def __post_init__(self) -> None:
        self.embeddings = np.ascontiguousarray(self.embeddings, dtype=np.float32)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.class_names):
            raise ShapeMismatchError("need exactly one attribute row per class")
        if not np.all(np.isfinite(self.embeddings)):
            raise ValueError("attribute vectors must be finite")

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])

    def rows(self, class_ids) -> np.ndarray:
        return self.embeddings[np.asarray(class_ids, dtype=np.int64)]


def save_attributes(attrs: AttributeSet, directory) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": 1,
        "num_classes": len(attrs.class_names),
        "attr_dim": attrs.dim,
        "class_names": list(attrs.class_names),
        "dtype": "f32le",
    }
    (out / "attributes.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (out / "attributes.bin").write_bytes(attrs.embeddings.astype(F32LE).tobytes())
    return out


def load_attributes(directory) -> AttributeSet:
    src = Path(directory)
    m = read_manifest(src / "attributes.json", ("num_classes", "attr_dim", "class_names"))
    c, d = int(m["num_classes"]), int(m["attr_dim"])
    if len(m["class_names"]) != c:
        raise ShapeMismatchWithManifestError(f"{c} classes but {len(m['class_names'])} names")
    data = read_exact(src / "attributes.bin", F32LE, c * d).reshape(c, d)
    return AttributeSet(data.astype(np.float32), list(m["class_names"]))


@dataclass
class KnownUnknownSplit:
    known: list
    unknown: list
    ratio: str

    def __post_init__(self) -> None:
        if set(self.known) & set(self.unknown):
            raise RatioMismatchError("known and unknown classes overlap")


def _parse_ratio(ratio) -> tuple:
    if isinstance(ratio, str):
        parts = ratio.split("/")
        if len(parts) != 2:
            raise RatioMismatchError(f"ratio must look like 'known/unknown', got {ratio!r}")
        return int(parts[0]), int(parts[1])
    known, unknown = ratio
    return int(known), int(unknown)


def split_classes(num_classes: int, ratio, seed: int = 0) -> KnownUnknownSplit:
    """Random disjoint known/unknown partition of ``range(num_classes)``."""
    n_known, n_unknown = _parse_ratio(ratio)
    if n_known < 1 or n_unknown < 1 or n_known + n_unknown != num_classes:
        raise RatioMismatchError(f"ratio {n_known}/{n_unknown} does not partition {num_classes} classes")
    perm = Rng(seed, stream=41).permutation(num_classes)
    return KnownUnknownSplit(
        sorted(int(c) for c in perm[:n_known]),
        sorted(int(c) for c in perm[n_known:]),
        f"{n_known}/{n_unknown}",
    )


def parameter_checksum(module: Module) -> str:
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


class InstrumentedLoader:
    """Serves samples to zero-shot training and records every index it touches.

    Requests for samples of a forbidden class fail immediately.
    """

    def __init__(self, ds: EmbeddingDataset, forbidden_classes: Sequence[int]):
        self.ds = ds
        self.forbidden = set(int(c) for c in forbidden_classes)
        self.touched: set = set()

    def fetch(self, indices) -> tuple:
        idx = np.asarray(indices, dtype=np.int64)
        bad = [int(i) for i in idx if int(self.ds.labels[i]) in self.forbidden]
        if bad:
            raise AssertionError(f"samples {bad[:5]} belong to unknown classes")
        self.touched.update(int(i) for i in idx)
        return Tensor(self.ds.text[idx]), Tensor(self.ds.image[idx]), self.ds.labels[idx]


class ZeroShotHead(Module):
    """Frozen backbone plus trainable data and attribute projections."""

    def __init__(self, backbone, attr_dim: int, emb_dim: int = 64, seed: int = 0,
                 temperature: float = TEMPERATURE):
        self._backbone = backbone  # underscore: excluded from this module's parameters
        rng = Rng(seed, stream=42)
        self.data_proj = Linear(backbone.feature_dim, emb_dim, rng)
        self.attr_proj = Linear(attr_dim, emb_dim, rng)
        self.temperature = temperature

    @property
    def backbone(self):
        return self._backbone

    def backbone_features(self, text: Tensor, image: Tensor) -> np.ndarray:
        with no_grad():
            return self._backbone.features(text, image, training=False).data.copy()

    def similarity(self, features: Tensor, attr_rows: Tensor) -> Tensor:
        """Cosine similarity matrix ``(B, K)`` between projected features and attributes."""
        z = ops.l2_normalize(self.data_proj(features))
        a = ops.l2_normalize(self.attr_proj(attr_rows))
        return ops.matmul(z, ops.transpose(a))

    def logits(self, features: Tensor, attr_rows: Tensor) -> Tensor:
        return ops.scale(self.similarity(features, attr_rows), 1.0 / self.temperature)


@dataclass
class ZeroShotConfig:
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 64
    emb_dim: int = 64
    clip_norm: float = 0.8
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def train_zeroshot(head: ZeroShotHead, loader: InstrumentedLoader, train_indices, attrs: AttributeSet,
                   split: KnownUnknownSplit, cfg: ZeroShotConfig = ZeroShotConfig()) -> list:
    """Fit the two projections on known-class samples; returns per-epoch mean loss."""
    before = parameter_checksum(head.backbone)
    train_indices = np.asarray(train_indices, dtype=np.int64)
    text, image, labels = loader.fetch(train_indices)
    feats = head.backbone_features(text, image)
    position = {c: i for i, c in enumerate(split.known)}
    targets = np.array([position[int(c)] for c in labels], dtype=np.int64)
    known_attrs = Tensor(attrs.rows(split.known))

    params = head.parameters()
    state = AdamState([p.shape for p in params])
    rng = Rng(cfg.seed, stream=43)
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(train_indices))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            with Tape() as tape:
                loss = ops.cross_entropy(head.logits(Tensor(feats[b]), known_attrs), targets[b])
            grads = tape.backward(loss)
            g = [grads[p] if p in grads else np.zeros(p.shape, dtype=p.dtype) for p in params]
            g, _ = clip_gradients(g, cfg.clip_norm)
            adam_step(state, params, g, cfg.lr)
            total += float(loss.data) * len(b)
        losses.append(total / max(len(order), 1))
    if parameter_checksum(head.backbone) != before:
        raise BackboneMutatedError("backbone parameters changed during zero-shot training")
    return losses


def zeroshot_infer(head: ZeroShotHead, text: Tensor, image: Tensor, attrs: AttributeSet,
                   candidates: Sequence[int]) -> np.ndarray:
    """Predicted class id per sample: the candidate with the most similar attribute."""
    candidates = list(candidates)
    if not candidates:
        raise EmptyCandidatesError("candidate class set is empty")
    feats = head.backbone_features(text, image)
    with no_grad():
        sims = head.similarity(Tensor(feats), Tensor(attrs.rows(candidates))).data
    return np.asarray(candidates, dtype=np.int64)[np.argmax(sims, axis=1)]


def top1_accuracy(head: ZeroShotHead, ds: EmbeddingDataset, indices, attrs: AttributeSet,
                  candidates: Sequence[int]) -> float:
    idx = np.asarray(indices, dtype=np.int64)
    preds = zeroshot_infer(head, Tensor(ds.text[idx]), Tensor(ds.image[idx]), attrs, candidates)
    return float(np.mean(preds == ds.labels[idx]))


@dataclass
class ZeroShotRun:
    ratio: str
    backbone: str
    known: list
    unknown: list
    top1: float
    exposed_unknown: int = 0
    backbone_checksum: str = ""
    losses: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def run_zeroshot(ds: EmbeddingDataset, splits: Splits, attrs: AttributeSet, ratio, backbone_kind: str,
                 train_cfg: TrainConfig, zs_cfg: ZeroShotConfig = ZeroShotConfig(), seed: int = 0) -> ZeroShotRun:
    """Pretrain a backbone on known classes, freeze it, fit the head, score unknown classes.

    ``backbone_kind`` is ``"fusion"`` (multimodal, full variant) or ``"io"``
    (image only). Unknown-class samples are never touched before scoring;
    the test pool is every unknown-class sample.
    """
    from .models import build_model

    split = split_classes(ds.num_classes, ratio, seed)
    unknown = set(split.unknown)
    is_known = np.array([int(c) not in unknown for c in ds.labels])
    train_idx = splits.train[is_known[splits.train]]
    val_idx = splits.val[is_known[splits.val]]

    loader = InstrumentedLoader(ds, split.unknown)
    backbone = build_model(backbone_kind, ds.dims, ds.num_classes, "full", seed=seed)
    # backbone pretraining sees only known-class samples
    loader.fetch(np.concatenate([train_idx, val_idx]))
    train_model(backbone, ds, train_idx, val_idx, train_cfg)

    head = ZeroShotHead(backbone, attrs.dim, zs_cfg.emb_dim, seed=seed)
    checksum = parameter_checksum(backbone)
    losses = train_zeroshot(head, loader, train_idx, attrs, split, zs_cfg)
    exposed = sum(1 for i in loader.touched if int(ds.labels[i]) in unknown)

    test_idx = np.flatnonzero(~is_known)
    top1 = top1_accuracy(head, ds, test_idx, attrs, split.unknown)
    return ZeroShotRun(split.ratio, backbone_kind, split.known, split.unknown, top1, exposed, checksum, losses)
