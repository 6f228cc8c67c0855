"""Command-line interface: ``dualfuse <command> ...``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
configuration error. Report files are written with sorted keys and contain
no timestamps, so a fixed seed reproduces them byte for byte.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    SplitSpec,
    Splits,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    make_splits,
    save_dataset,
    synthetic_attributes,
)
from .errors import BadConfigError, DualFuseError, UnknownVariantError
from .experiments import run_bench
from .fusion import FULL_SCALE, Dims, Variant
from .gradsuite import MICRO_DIMS, run_suite
from .models import MODEL_KINDS, build_model
from .training import TrainConfig, evaluate, train_model
from .zeroshot import DEFAULT_RATIOS, AttributeSet, ZeroShotConfig, load_attributes, run_zeroshot, save_attributes

log = logging.getLogger("dualfuse")

DIM_PRESETS = {"micro": MICRO_DIMS, "desk": Dims(12, 16, 10, 12), "full": FULL_SCALE}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Training hyperparameters plus model selection and paths."""

    model: str = "fusion"
    variant: str = "full"
    num_layers: int = 2
    num_heads: int = 4
    dims: Optional[dict] = None
    data: Optional[str] = None
    splits: Optional[str] = None
    out: Optional[str] = None
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        own = {f.name for f in fields(cls)} - {"train"}
        train_keys = TrainConfig.field_names()
        unknown = sorted(set(raw) - own - train_keys)
        if unknown:
            raise BadConfigError(f"unknown config keys: {unknown}")
        cfg = cls(**{k: v for k, v in raw.items() if k in own},
                  train=TrainConfig(**{k: v for k, v in raw.items() if k in train_keys}))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.model not in MODEL_KINDS:
            raise BadConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        Variant.parse(self.variant)
        if self.dims is not None:
            Dims(**self.dims)

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "train"}
        out.update(self.train.to_dict())
        return out


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _parse_dims(text: str) -> Dims:
    if text in DIM_PRESETS:
        return DIM_PRESETS[text]
    try:
        values = [int(v) for v in text.split(",")]
    except ValueError:
        values = []
    if len(values) != 4:
        raise UsageError(f"--dims takes a preset {sorted(DIM_PRESETS)} or 'L_i,D_i,L_t,D_t', got {text!r}")
    return Dims(*values)


def _parse_pairs(text: Optional[str]) -> list:
    if not text:
        return []
    try:
        return [tuple(int(v) for v in pair.split("-")) for pair in text.split(",")]
    except ValueError:
        raise UsageError(f"pairs look like '0-1,2-3', got {text!r}") from None


def _load_run_config(args) -> RunConfig:
    raw = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise BadConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise BadConfigError("config must be a JSON object")
    overrides = {
        "model": getattr(args, "model", None),
        "variant": getattr(args, "variant", None),
        "data": getattr(args, "data", None),
        "splits": getattr(args, "splits", None),
        "seed": getattr(args, "seed", None),
        "epochs": getattr(args, "epochs", None),
        "lr": getattr(args, "lr", None),
        "patience": getattr(args, "patience", None),
    }
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(raw)


def _splits_for(cfg: RunConfig, ds) -> Splits:
    if cfg.splits:
        return Splits.from_dict(json.loads(Path(cfg.splits).read_text()))
    return make_splits(ds.num_samples, SplitSpec(seed=cfg.train.seed))


# --- commands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    dims = _parse_dims(args.dims)
    cfg = SyntheticConfig(
        num_classes=args.classes,
        per_class=args.per_class,
        dims=dims,
        noise=args.noise,
        image_confusable=_parse_pairs(args.image_confusable),
        text_confusable=_parse_pairs(args.text_confusable),
    )
    ds = generate_synthetic(cfg, args.seed)
    out = save_dataset(ds, args.out)
    write_json(out / "synthetic.json", {"seed": args.seed, **cfg.to_dict()})
    if args.attributes:
        save_attributes(AttributeSet(synthetic_attributes(cfg, args.seed), ds.class_names), out / "attributes")
    print(f"wrote {ds.num_samples} samples, {ds.num_classes} classes to {out}")
    return 0


def cmd_split(args) -> int:
    ds = load_dataset(args.data)
    splits = make_splits(ds.num_samples, SplitSpec(seed=args.seed))
    write_json(Path(args.out), splits.to_dict())
    print(f"train {len(splits.train)} / val {len(splits.val)} / test {len(splits.test)} -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    if not cfg.data:
        raise UsageError("train needs --data (or 'data' in the config)")
    ds = load_dataset(cfg.data)
    if cfg.dims is not None and Dims(**cfg.dims) != ds.dims:
        raise BadConfigError(f"config dims {cfg.dims} do not match dataset {ds.dims.to_dict()}")
    out = Path(args.out or cfg.out or f"runs/{cfg.model}-{cfg.variant}")
    splits = _splits_for(cfg, ds)
    kwargs = {}
    if cfg.model == "fusion":
        kwargs = {"num_layers": cfg.num_layers, "num_heads": cfg.num_heads,
                  "attn_dropout": cfg.train.attn_dropout, "dropout": cfg.train.dropout}
    model = build_model(cfg.model, ds.dims, ds.num_classes, cfg.variant, seed=cfg.train.seed, **kwargs)

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "history.jsonl", "w") as fh:
        def on_epoch(rec: dict) -> None:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
            log.info("epoch %d  train %.4f  val %.4f  OA %.3f",
                     rec["epoch"], rec["train_loss"], rec["val_loss"], rec["val_OA"])

        _, history = train_model(model, ds, splits.train, splits.val, cfg.train, on_epoch)
    save_checkpoint(model, out / "checkpoint")
    write_json(out / "run_config.json", cfg.to_dict())
    write_json(out / "splits.json", splits.to_dict())
    best = min(history, key=lambda r: r["val_loss"])
    print(f"trained {len(history)} epochs; best epoch {best['epoch']} val OA {best['val_OA']:.4f} -> {out}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    if args.splits:
        splits = Splits.from_dict(json.loads(Path(args.splits).read_text()))
    else:
        splits = make_splits(ds.num_samples, SplitSpec(seed=args.seed))
    indices = {"train": splits.train, "val": splits.val, "test": splits.test}[args.subset]
    report = evaluate(model, ds, indices, args.topk)
    out = Path(args.out)
    write_json(out / "metrics.json", report.to_dict())
    (out / "confusion.csv").write_text(report.confusion_csv())
    print(f"OA {report.oa:.4f}  AA {report.aa:.4f}  Kappa {report.kappa:.4f}  "
          f"top-{report.topk} {report.topk_oa:.4f} -> {out}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.dims != "micro":
        raise UsageError("gradcheck runs on --dims micro only")
    modes = ("f32", "f64") if args.mode == "both" else (args.mode,)
    reports = [run_suite(mode, max_entries=args.max_entries, seed=args.seed) for mode in modes]
    for rep in reports:
        for check in rep["checks"]:
            status = "ok  " if check["passed"] else "FAIL"
            print(f"{status} {rep['mode']} {check['name']:<32} max rel err {check['max_rel_error']:.2e}")
    passed = all(r["passed"] for r in reports)
    if args.out:
        write_json(Path(args.out), {"passed": passed, "reports": reports})
    print("all gradient checks passed" if passed else "gradient check FAILED")
    return 0 if passed else 1


def cmd_zeroshot(args) -> int:
    cfg = _load_run_config(args)
    ds = load_dataset(args.data)
    attrs = load_attributes(args.attributes)
    if len(attrs.class_names) != ds.num_classes:
        raise BadConfigError(f"{len(attrs.class_names)} attribute rows for {ds.num_classes} classes")
    splits = _splits_for(cfg, ds)
    zs_cfg = ZeroShotConfig(seed=cfg.train.seed)
    runs = []
    for ratio in args.ratios.split(","):
        for backbone in args.backbones.split(","):
            if backbone not in ("fusion", "io"):
                raise UsageError(f"zero-shot backbone must be 'fusion' or 'io', got {backbone!r}")
            run = run_zeroshot(ds, splits, attrs, ratio, backbone, cfg.train, zs_cfg, seed=cfg.train.seed)
            print(f"{run.ratio:>6} {backbone:<6} top-1 {run.top1:.4f}")
            runs.append(run.to_dict())
    report = {"train": cfg.train.to_dict(), "zeroshot": zs_cfg.to_dict(), "runs": runs}
    write_json(Path(args.out) / "zeroshot_report.json", report)
    return 0


def cmd_bench(args) -> int:
    cfg = _load_run_config(args)
    ds = load_dataset(cfg.data)
    spec = SplitSpec(seed=cfg.train.seed, folds=args.folds)
    result = run_bench(ds, cfg.train, spec, progress=lambda m: print(m, file=sys.stderr))
    out = Path(args.out)
    write_json(out / "bench.json", {"train": cfg.train.to_dict(), **result.to_dict()})
    (out / "bench.md").write_text(result.table())
    print(result.table(), end="")
    return 0


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualfuse", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic embedding dataset")
    s.add_argument("--classes", type=int, default=8)
    s.add_argument("--per-class", type=int, default=200)
    s.add_argument("--dims", default="desk", help="micro | desk | full | L_i,D_i,L_t,D_t")
    s.add_argument("--noise", type=float, default=0.5)
    s.add_argument("--image-confusable", help="class pairs sharing the image mean, e.g. 0-1,2-3")
    s.add_argument("--text-confusable", help="class pairs sharing the text mean")
    s.add_argument("--attributes", action="store_true", help="also write per-class attribute vectors")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", help="write the train/val/test split of a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="splits.json")
    s.set_defaults(func=cmd_split)

    def run_args(s, model=True):
        s.add_argument("--config", help="RunConfig JSON")
        if model:
            s.add_argument("--model", choices=MODEL_KINDS)
            s.add_argument("--variant", choices=[v.value for v in Variant])
        s.add_argument("--data")
        s.add_argument("--splits", help="splits.json to use instead of a fresh split")
        s.add_argument("--seed", type=int)
        s.add_argument("--epochs", type=int)
        s.add_argument("--lr", type=float)
        s.add_argument("--patience", type=int)

    s = sub.add_parser("train", help="train one model and save a checkpoint")
    run_args(s)
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--splits")
    s.add_argument("--seed", type=int, default=0, help="split seed when --splits is absent")
    s.add_argument("--subset", choices=("train", "val", "test"), default="test")
    s.add_argument("--topk", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference check of every layer and model")
    s.add_argument("--dims", default="micro")
    s.add_argument("--mode", choices=("f32", "f64", "both"), default="both")
    s.add_argument("--max-entries", type=int, default=8, help="entries checked per parameter")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("zeroshot", help="zero-shot top-1 on unknown classes")
    run_args(s, model=False)
    s.add_argument("--attributes", required=True, help="directory with attributes.json/.bin")
    s.add_argument("--ratios", default=",".join(DEFAULT_RATIOS))
    s.add_argument("--backbones", default="fusion,io")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_zeroshot)

    s = sub.add_parser("bench", help="cross-validated comparison of all models")
    run_args(s, model=False)
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bench)
    return p


def _thread_limit():
    value = os.environ.get("DUALFUSE_THREADS")
    if not value:
        return contextlib.nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"DUALFUSE_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise UsageError("DUALFUSE_THREADS must be at least 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        with _thread_limit():
            return args.func(args)
    except (UsageError, BadConfigError, UnknownVariantError) as exc:
        print(f"dualfuse {args.command}: {exc}", file=sys.stderr)
        return 2
    except (DualFuseError, OSError, ValueError, KeyError) as exc:
        print(f"dualfuse {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
