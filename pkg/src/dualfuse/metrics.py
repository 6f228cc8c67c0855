"""Classification metrics: OA, AA, Cohen's kappa, top-k accuracy, confusion matrices."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyEvalSetError, EmptyMatrixError


def default_topk(num_classes: int) -> int:
    """Top-5, or top-3 for label sets of six classes or fewer."""
    return 3 if num_classes <= 6 else 5


def confusion_matrix(labels, preds, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (np.asarray(labels, dtype=np.int64), np.asarray(preds, dtype=np.int64)), 1)
    return conf


def _check(conf: np.ndarray) -> np.ndarray:
    conf = np.asarray(conf)
    if conf.ndim != 2 or conf.shape[0] != conf.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {conf.shape}")
    if (conf < 0).any():
        raise ValueError("confusion matrix entries must be non-negative")
    if conf.sum() <= 0:
        raise EmptyMatrixError("confusion matrix is empty")
    return conf


def overall_accuracy(conf) -> float:
    conf = _check(conf)
    return float(np.trace(conf) / conf.sum())


def average_accuracy(conf) -> float:
    """Mean per-class recall over classes that occur in the ground truth."""
    conf = _check(conf)
    support = conf.sum(axis=1)
    present = support > 0
    return float(np.mean(np.diag(conf)[present] / support[present]))


def cohen_kappa(conf) -> float:
    """``(p_o - p_e) / (1 - p_e)``; when ``p_e == 1`` returns 1 if ``p_o == 1`` else 0.

    Evaluated on integer counts as ``(N tr - S) / (N^2 - S)`` with
    ``S = sum(row_c * col_c)``, so the only rounding is the final division.
    """
    conf = _check(conf)
    counts = [[int(v) for v in row] for row in conf.tolist()]
    total = sum(map(sum, counts))
    trace = sum(counts[i][i] for i in range(len(counts)))
    rows = [sum(r) for r in counts]
    cols = [sum(c) for c in zip(*counts)]
    chance = sum(r * c for r, c in zip(rows, cols))
    if chance == total * total:
        return 1.0 if trace == total else 0.0
    return (total * trace - chance) / (total * total - chance)


def topk_accuracy(labels, scores, k: int) -> float:
    """Fraction of samples whose label is among the ``k`` highest scores.

    Ties are broken by class index, matching ``argmax`` for ``k == 1``.
    """
    scores = np.asarray(scores)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise EmptyEvalSetError("no samples")
    k = min(k, scores.shape[1])
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(order == labels[:, None], axis=1)))


@dataclass
class MetricsReport:
    oa: float
    aa: float
    kappa: float
    topk: int
    topk_oa: float
    confusion: np.ndarray
    class_names: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "OA": self.oa,
            "AA": self.aa,
            "Kappa": self.kappa,
            "topk": self.topk,
            "topk_OA": self.topk_oa,
            "confusion": self.confusion.tolist(),
            "class_names": list(self.class_names),
        }

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([""] + list(self.class_names))
        for name, row in zip(self.class_names, self.confusion.tolist()):
            writer.writerow([name] + row)
        return buf.getvalue()


def metrics_from_scores(labels, scores, class_names: Sequence[str], topk: Optional[int] = None) -> MetricsReport:
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores)
    if labels.size == 0:
        raise EmptyEvalSetError("cannot evaluate an empty index set")
    c = len(class_names)
    k = default_topk(c) if topk is None else topk
    conf = confusion_matrix(labels, np.argmax(scores, axis=1), c)
    return MetricsReport(
        oa=overall_accuracy(conf),
        aa=average_accuracy(conf),
        kappa=cohen_kappa(conf),
        topk=k,
        topk_oa=topk_accuracy(labels, scores, k),
        confusion=conf,
        class_names=list(class_names),
    )


def mean_std(values) -> tuple:
    """Mean and sample standard deviation (0 for a single value)."""
    v = np.asarray(values, dtype=np.float64)
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return float(v.mean()), std


def format_mean_std(values, percent: bool = True) -> str:
    """``"mean (std)"`` with one decimal, in percent by default."""
    m, s = mean_std(values)
    f = 100.0 if percent else 1.0
    return f"{m * f:.1f} ({s * f:.1f})"
