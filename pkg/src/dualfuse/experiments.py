"""Cross-validated comparison of baselines, ablations and the full model."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .data import EmbeddingDataset, SplitSpec, Splits, cv_rounds, make_splits
from .metrics import format_mean_std, mean_std
from .models import build_model
from .training import TrainConfig, evaluate, train_model

log = logging.getLogger(__name__)

# (row label, model kind, variant) in table order
BENCH_ROWS = (
    ("IO", "io", "full"),
    ("TO", "to", "full"),
    ("EF", "ef", "full"),
    ("LF", "lf", "full"),
    ("NoCAtt", "fusion", "nocatt"),
    ("ICAtt", "fusion", "icatt"),
    ("TCAtt", "fusion", "tcatt"),
    ("Full", "fusion", "full"),
)


@dataclass
class BenchResult:
    rows: dict = field(default_factory=dict)  # label -> {"OA": [...], "topk_OA": [...], "AA": [...], "Kappa": [...]}
    topk: int = 5
    folds: int = 5

    def mean(self, label: str, metric: str = "OA") -> float:
        return mean_std(self.rows[label][metric])[0]

    def to_dict(self) -> dict:
        out = {"folds": self.folds, "topk": self.topk, "rows": []}
        for label, m in self.rows.items():
            row = {"model": label}
            for metric in ("OA", "topk_OA", "AA", "Kappa"):
                mu, sd = mean_std(m[metric])
                row[metric] = {"mean": mu, "std": sd, "folds": list(m[metric]),
                               "cell": format_mean_std(m[metric])}
            out["rows"].append(row)
        return out

    def table(self) -> str:
        """Markdown table, ``mean (std)`` cells in percent."""
        lines = [
            f"| Model | OA/top-{self.topk} | AA | Kappa |",
            "|---|---|---|---|",
        ]
        for label, m in self.rows.items():
            oa_mu, oa_sd = mean_std(m["OA"])
            tk_mu, tk_sd = mean_std(m["topk_OA"])
            oa = f"{oa_mu * 100:.1f}/{tk_mu * 100:.1f} ({oa_sd * 100:.1f}/{tk_sd * 100:.1f})"
            lines.append(f"| {label} | {oa} | {format_mean_std(m['AA'])} | {format_mean_std(m['Kappa'])} |")
        return "\n".join(lines) + "\n"


def run_bench(ds: EmbeddingDataset, cfg: TrainConfig, split_spec: SplitSpec = SplitSpec(),
              rows: Sequence[tuple] = BENCH_ROWS, splits: Optional[Splits] = None,
              topk: Optional[int] = None, progress: Optional[Callable[[str], None]] = None) -> BenchResult:
    """Train every row once per fold (from scratch) and score it on the held-out test split."""
    splits = splits or make_splits(ds.num_samples, split_spec)
    rounds = cv_rounds(splits, split_spec)
    result = BenchResult(folds=len(rounds))
    for label, _, _ in rows:
        result.rows[label] = {"OA": [], "topk_OA": [], "AA": [], "Kappa": []}
    for fold, (train_idx, val_idx) in enumerate(rounds):
        for label, kind, variant in rows:
            start = time.perf_counter()
            model = build_model(kind, ds.dims, ds.num_classes, variant, seed=cfg.seed + fold,
                                **_fusion_kwargs(kind, cfg))
            fold_cfg = TrainConfig(**{**cfg.to_dict(), "seed": cfg.seed + fold})
            train_model(model, ds, train_idx, val_idx, fold_cfg)
            report = evaluate(model, ds, splits.test, topk)
            result.topk = report.topk
            m = result.rows[label]
            m["OA"].append(report.oa)
            m["topk_OA"].append(report.topk_oa)
            m["AA"].append(report.aa)
            m["Kappa"].append(report.kappa)
            msg = f"fold {fold + 1}/{len(rounds)} {label}: OA {report.oa:.3f} ({time.perf_counter() - start:.1f}s)"
            log.info(msg)
            if progress is not None:
                progress(msg)
    return result


def _fusion_kwargs(kind: str, cfg: TrainConfig) -> dict:
    if kind != "fusion":
        return {}
    return {"attn_dropout": cfg.attn_dropout, "dropout": cfg.dropout}
