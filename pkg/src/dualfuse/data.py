"""Embedding datasets: on-disk format, split protocol and a synthetic generator.

Directory layout::

    manifest.json  {"version": 1, "num_samples": NS, "num_classes": C,
                    "class_names": [...], "image_shape": [L_i, D_i],
                    "text_shape": [L_t, D_t], "dtype": "f32le"}
    image.bin      NS * L_i * D_i little-endian float32, sample-major, row-major
    text.bin       NS * L_t * D_t little-endian float32
    labels.bin     NS little-endian uint32
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .engine import Rng
from .errors import (
    BadConfigError,
    BadMagicError,
    LabelOutOfRangeError,
    ShapeMismatchError,
    ShapeMismatchWithManifestError,
    TooFewSamplesError,
    TruncatedFileError,
)
from .fusion import Dims

FORMAT_VERSION = 1
F32LE = np.dtype("<f4")
U32LE = np.dtype("<u4")


@dataclass
class EmbeddingDataset:
    image: np.ndarray  # (NS, L_i, D_i)
    text: np.ndarray  # (NS, L_t, D_t)
    labels: np.ndarray  # (NS,)
    class_names: list

    def __post_init__(self) -> None:
        self.image = np.ascontiguousarray(self.image, dtype=np.float32)
        self.text = np.ascontiguousarray(self.text, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_names = [str(c) for c in self.class_names]
        if self.image.ndim != 3 or self.text.ndim != 3:
            raise ShapeMismatchError(f"embeddings must be 3-D, got {self.image.shape}, {self.text.shape}")
        n = self.labels.shape[0]
        if self.image.shape[0] != n or self.text.shape[0] != n:
            raise ShapeMismatchError(
                f"sample counts disagree: image {self.image.shape[0]}, text {self.text.shape[0]}, labels {n}"
            )
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise LabelOutOfRangeError(f"labels must lie in [0, {len(self.class_names)})")

    @property
    def num_samples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def dims(self) -> Dims:
        return Dims(self.image.shape[1], self.image.shape[2], self.text.shape[1], self.text.shape[2])

    def subset(self, indices) -> "EmbeddingDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return EmbeddingDataset(self.image[idx], self.text[idx], self.labels[idx], self.class_names)


def save_dataset(ds: EmbeddingDataset, directory) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    d = ds.dims
    manifest = {
        "version": FORMAT_VERSION,
        "num_samples": ds.num_samples,
        "num_classes": ds.num_classes,
        "class_names": ds.class_names,
        "image_shape": [d.l_i, d.d_i],
        "text_shape": [d.l_t, d.d_t],
        "dtype": "f32le",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (out / "image.bin").write_bytes(ds.image.astype(F32LE).tobytes())
    (out / "text.bin").write_bytes(ds.text.astype(F32LE).tobytes())
    (out / "labels.bin").write_bytes(ds.labels.astype(U32LE).tobytes())
    return out


def read_manifest(path: Path, required: Sequence[str]) -> dict:
    try:
        manifest = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadMagicError(f"unreadable manifest {path}: {exc}") from None
    if not isinstance(manifest, dict) or manifest.get("version") != FORMAT_VERSION:
        raise BadMagicError(f"{path}: expected version {FORMAT_VERSION}")
    if manifest.get("dtype") != "f32le":
        raise BadMagicError(f"{path}: unsupported dtype {manifest.get('dtype')!r}")
    missing = [k for k in required if k not in manifest]
    if missing:
        raise BadMagicError(f"{path}: missing keys {missing}")
    return manifest


def read_exact(path: Path, dtype: np.dtype, count: int) -> np.ndarray:
    """Read exactly ``count`` items; short files are truncated, long ones mismatched."""
    raw = Path(path).read_bytes()
    expected = count * dtype.itemsize
    if len(raw) < expected:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes, expected {expected}")
    if len(raw) > expected:
        raise ShapeMismatchWithManifestError(f"{path}: {len(raw)} bytes, manifest implies {expected}")
    return np.frombuffer(raw, dtype=dtype).copy()


def load_dataset(directory) -> EmbeddingDataset:
    src = Path(directory)
    m = read_manifest(src / "manifest.json",
                      ("num_samples", "num_classes", "class_names", "image_shape", "text_shape"))
    ns, c = int(m["num_samples"]), int(m["num_classes"])
    if len(m["class_names"]) != c:
        raise ShapeMismatchWithManifestError(f"{c} classes but {len(m['class_names'])} class names")
    li, di = (int(v) for v in m["image_shape"])
    lt, dt = (int(v) for v in m["text_shape"])
    image = read_exact(src / "image.bin", F32LE, ns * li * di).reshape(ns, li, di)
    text = read_exact(src / "text.bin", F32LE, ns * lt * dt).reshape(ns, lt, dt)
    labels = read_exact(src / "labels.bin", U32LE, ns).astype(np.int64)
    return EmbeddingDataset(image.astype(np.float32), text.astype(np.float32), labels, list(m["class_names"]))


# --- split protocol ---------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.10
    val_fraction: float = 0.20
    folds: int = 5
    seed: int = 0


@dataclass
class Splits:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def to_dict(self) -> dict:
        return {"train": self.train.tolist(), "val": self.val.tolist(), "test": self.test.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Splits":
        return cls(*(np.asarray(d[k], dtype=np.int64) for k in ("train", "val", "test")))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_splits(num_samples: int, spec: SplitSpec = SplitSpec()) -> Splits:
    """Hold out ``round(0.1 NS)`` for test, then split the rest 8:2 into train/val."""
    if num_samples < 10:
        raise TooFewSamplesError(f"need at least 10 samples, got {num_samples}")
    perm = Rng(spec.seed, stream=11).permutation(num_samples)
    n_test = _round_half_up(spec.test_fraction * num_samples)
    rest = perm[n_test:]
    n_val = _round_half_up(spec.val_fraction * len(rest))
    return Splits(np.sort(rest[n_val:]), np.sort(rest[:n_val]), np.sort(perm[:n_test]))


def kfold(indices, k: int = 5, seed: int = 0) -> list:
    """Shuffle ``indices`` and cut them into ``k`` near-equal disjoint folds."""
    indices = np.asarray(indices, dtype=np.int64)
    if k < 2 or len(indices) < k:
        raise TooFewSamplesError(f"cannot cut {len(indices)} indices into {k} folds")
    shuffled = Rng(seed, stream=12).shuffle(indices)
    return [np.sort(part) for part in np.array_split(shuffled, k)]


def cv_rounds(splits: Splits, spec: SplitSpec = SplitSpec()) -> list:
    """``(train, val)`` index pairs: each fold of train+val serves once as validation."""
    folds = kfold(np.concatenate([splits.train, splits.val]), spec.folds, spec.seed)
    rounds = []
    for i, val in enumerate(folds):
        train = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        rounds.append((train, val))
    return rounds


# --- synthetic benchmark ----------------------------------------------------


@dataclass
class SyntheticConfig:
    """Class-mean embedding generator with controllable cross-modal confusability.

    Each class owns one random unit-norm mean row per modality; a sample's
    rows are that mean row plus i.i.d. ``N(0, noise**2)`` entries.
    ``image_confusable`` pairs share their image mean (separable only by
    text); ``text_confusable`` pairs share their text mean.
    """

    num_classes: int = 8
    per_class: int = 200
    dims: Dims = field(default_factory=lambda: Dims(12, 16, 10, 12))
    noise: float = 0.5
    image_confusable: list = field(default_factory=list)
    text_confusable: list = field(default_factory=list)
    class_names: Optional[list] = None

    def validate(self) -> None:
        if self.num_classes < 1 or self.per_class < 0 or self.noise < 0:
            raise BadConfigError("num_classes >= 1, per_class >= 0 and noise >= 0 are required")
        d = self.dims
        if min(d.l_i, d.d_i, d.l_t, d.d_t) < 1:
            raise BadConfigError(f"non-positive dims {d}")
        seen = set()
        for pair in list(self.image_confusable) + list(self.text_confusable):
            a, b = (int(v) for v in pair)
            if a == b or not (0 <= a < self.num_classes and 0 <= b < self.num_classes):
                raise BadConfigError(f"bad confusable pair {pair}")
            if a in seen or b in seen:
                raise BadConfigError(f"confusable pairs must be disjoint; {pair} overlaps")
            seen.update((a, b))
        if self.class_names is not None and len(self.class_names) != self.num_classes:
            raise BadConfigError("class_names must have one entry per class")

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "per_class": self.per_class,
            "dims": self.dims.to_dict(),
            "noise": self.noise,
            "image_confusable": [list(p) for p in self.image_confusable],
            "text_confusable": [list(p) for p in self.text_confusable],
        }


def _unit_rows(rng: Rng, shape: tuple) -> np.ndarray:
    x = rng.normal(shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def class_means(cfg: SyntheticConfig, seed: int) -> tuple:
    """Per-class mean rows ``(image_means, text_means)`` of shapes ``(C, D_i)``, ``(C, D_t)``."""
    cfg.validate()
    rng = Rng(seed, stream=21)
    return _draw_means(cfg, rng)


def _draw_means(cfg: SyntheticConfig, rng: Rng) -> tuple:
    d = cfg.dims
    mu_i = _unit_rows(rng, (cfg.num_classes, d.d_i))
    mu_t = _unit_rows(rng, (cfg.num_classes, d.d_t))
    for a, b in cfg.image_confusable:
        mu_i[b] = mu_i[a]
    for a, b in cfg.text_confusable:
        mu_t[b] = mu_t[a]
    return mu_i, mu_t


def generate_synthetic(cfg: SyntheticConfig, seed: int) -> EmbeddingDataset:
    cfg.validate()
    rng = Rng(seed, stream=21)
    mu_i, mu_t = _draw_means(cfg, rng)
    d = cfg.dims
    labels = np.repeat(np.arange(cfg.num_classes), cfg.per_class)
    n = labels.size
    # every row of a sample repeats its class mean row
    image = mu_i[labels][:, None, :] + cfg.noise * rng.normal((n, d.l_i, d.d_i))
    text = mu_t[labels][:, None, :] + cfg.noise * rng.normal((n, d.l_t, d.d_t))
    names = cfg.class_names or [f"class_{c}" for c in range(cfg.num_classes)]
    return EmbeddingDataset(image, text, labels, names)


def synthetic_attributes(cfg: SyntheticConfig, seed: int) -> np.ndarray:
    """Attribute vector per class: image mean row followed by text mean row."""
    mu_i, mu_t = class_means(cfg, seed)
    return np.concatenate([mu_i, mu_t], axis=1).astype(np.float32)
