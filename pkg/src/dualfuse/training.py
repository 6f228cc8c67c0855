"""Training recipe: Adam, step decay, global-norm clipping, early stopping."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from typing import Callable, Optional, Sequence

import numpy as np

from .data import EmbeddingDataset
from .engine import Rng, Tape, Tensor, no_grad, ops
from .errors import BadConfigError, EmptyEvalSetError, NonFiniteGradientError, ShapeMismatchError
from .metrics import MetricsReport, metrics_from_scores

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    lr_decay_epoch: int = 20
    lr_decay_factor: float = 0.1
    batch_size: int = 64
    epochs: int = 40
    clip_norm: float = 0.8
    patience: int = 10
    attn_dropout: float = 0.05
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        positive = ("lr", "lr_decay_epoch", "lr_decay_factor", "batch_size", "epochs", "clip_norm", "patience")
        for name in positive:
            if not getattr(self, name) > 0:
                raise BadConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.patience > self.epochs:
            raise BadConfigError("patience must not exceed epochs")
        for name in ("attn_dropout", "dropout"):
            if not 0 <= getattr(self, name) < 1:
                raise BadConfigError(f"{name} must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> set:
        return {f.name for f in fields(cls)}


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for 1-based ``epoch``: decayed once after ``lr_decay_epoch``."""
    return cfg.lr if epoch <= cfg.lr_decay_epoch else cfg.lr * cfg.lr_decay_factor


class AdamState:
    def __init__(self, shapes: Sequence[tuple], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = [np.zeros(s, dtype=np.float32) for s in shapes]
        self.v = [np.zeros(s, dtype=np.float32) for s in shapes]
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Sequence[np.ndarray], lr: float) -> None:
    """Bias-corrected Adam update, written into ``param.data``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatchError("params, grads and optimizer state must align")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ShapeMismatchError(f"gradient {g.shape} does not match parameter {p.shape}")
        m = state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        v = state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype)


def clip_gradients(grads: Sequence[np.ndarray], max_norm: float = 0.8) -> tuple:
    """Scale all gradients by ``max_norm / g`` when their global L2 norm ``g`` exceeds it.

    Returns ``(clipped, g)``.
    """
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))
    if not np.isfinite(total):
        raise NonFiniteGradientError("gradient norm is not finite")
    if total > max_norm:
        factor = max_norm / total
        return [g * g.dtype.type(factor) for g in grads], total
    return list(grads), total


class EarlyStopping:
    """Stop once validation loss has not improved for ``patience`` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = float("inf")
        self.best_epoch = 0
        self.last_epoch = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record an epoch; returns True when training should stop."""
        self.last_epoch = epoch
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
        return epoch - self.best_epoch >= self.patience

    @property
    def improved(self) -> bool:
        return self.best_epoch == self.last_epoch


def _tensors(ds: EmbeddingDataset, idx: np.ndarray) -> tuple:
    return Tensor(ds.text[idx]), Tensor(ds.image[idx])


def predict_scores(model, ds: EmbeddingDataset, indices, batch_size: int = 256) -> np.ndarray:
    """Eval-mode logits for ``indices``, batched in order."""
    indices = np.asarray(indices, dtype=np.int64)
    out = []
    with no_grad():
        for start in range(0, len(indices), batch_size):
            idx = indices[start:start + batch_size]
            text, image = _tensors(ds, idx)
            out.append(model(text, image, training=False).data.astype(np.float64))
    if not out:
        return np.zeros((0, ds.num_classes))
    return np.concatenate(out, axis=0)


def _loss(scores: np.ndarray, labels: np.ndarray) -> float:
    shifted = scores - scores.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


def train_model(model, ds: EmbeddingDataset, train_idx, val_idx, cfg: TrainConfig,
                on_epoch: Optional[Callable[[dict], None]] = None) -> tuple:
    """Train in place and restore the best-validation-loss parameters.

    Returns ``(model, history)``; ``history`` holds one dict per epoch with
    ``epoch``, ``lr``, ``train_loss``, ``val_loss`` and ``val_OA``.
    """
    train_idx = np.asarray(train_idx, dtype=np.int64)
    val_idx = np.asarray(val_idx, dtype=np.int64)
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise EmptyEvalSetError("training needs non-empty train and validation sets")
    shuffle_rng = Rng(cfg.seed, stream=31)
    dropout_rng = Rng(cfg.seed, stream=32)
    params = model.parameters()
    state = AdamState([p.shape for p in params])
    stopper = EarlyStopping(cfg.patience)
    best = model.state_dict()
    history = []
    val_labels = ds.labels[val_idx]

    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at(epoch, cfg)
        order = shuffle_rng.shuffle(train_idx)
        total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            text, image = _tensors(ds, idx)
            with Tape() as tape:
                logits = model(text, image, training=True, rng=dropout_rng)
                loss = ops.cross_entropy(logits, ds.labels[idx])
            grads = tape.backward(loss)
            g = [grads[p] if p in grads else np.zeros(p.shape, dtype=p.dtype) for p in params]
            g, _ = clip_gradients(g, cfg.clip_norm)
            adam_step(state, params, g, lr)
            total += float(loss.data) * len(idx)
            seen += len(idx)

        scores = predict_scores(model, ds, val_idx)
        val_loss = _loss(scores, val_labels)
        val_oa = float(np.mean(np.argmax(scores, axis=1) == val_labels))
        record = {"epoch": epoch, "lr": lr, "train_loss": total / seen, "val_loss": val_loss, "val_OA": val_oa}
        history.append(record)
        log.debug("epoch %d lr %.1e train %.4f val %.4f OA %.3f", epoch, lr, record["train_loss"], val_loss, val_oa)
        if on_epoch is not None:
            on_epoch(record)
        stop = stopper.update(epoch, val_loss)
        if stopper.improved:
            best = model.state_dict()
        if stop:
            break

    model.load_state_dict(best)
    return model, history


def evaluate(model, ds: EmbeddingDataset, indices, topk: Optional[int] = None) -> MetricsReport:
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise EmptyEvalSetError("cannot evaluate an empty index set")
    scores = predict_scores(model, ds, indices)
    return metrics_from_scores(ds.labels[indices], scores, ds.class_names, topk)
