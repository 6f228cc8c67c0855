"""Finite-difference gradient checks over every layer and every model on micro dims."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .engine import Rng, Tensor, grad_check, ops
from .fusion import Dims, DualAttentionLayer, FusionModel, PredictionHead, Variant
from .models import BASELINES
from .nn import Conv1d, Conv2d, LayerNorm, Linear, Mlp, Module, MultiHeadCMA, maxpool_forward

# large enough for two valid conv+pool stages, head counts dividing both widths
MICRO_DIMS = Dims(l_i=10, d_i=12, l_t=10, d_t=12)
TOLERANCE = {"f32": 1e-3, "f64": 1e-6}


@dataclass
class SuiteEntry:
    name: str
    module: Module
    loss: Callable[[], Tensor]


def _weighted_sum(y: Tensor, seed: int) -> Tensor:
    # a fixed random projection makes every output entry matter
    w = Tensor(Rng(seed, stream=99).normal(y.shape))
    return ops.sum_all(ops.mul(y, w))


def _inputs(rng: Rng, *shapes) -> list:
    return [rng.normal(s) for s in shapes]


def _t(a: np.ndarray) -> Tensor:
    # built inside each closure so inputs follow the working precision
    return Tensor(a)


def suite(dims: Dims = MICRO_DIMS, num_classes: int = 3, batch: int = 2, seed: int = 0) -> list:
    """Named (module, loss closure) pairs; the closures rebuild the graph per call."""
    rng = Rng(seed, stream=98)
    d = dims
    entries = []

    lin = Linear(d.d_i, d.d_t, rng)
    (x,) = _inputs(rng, (batch, d.l_i, d.d_i))
    entries.append(SuiteEntry("linear", lin, lambda: _weighted_sum(lin(_t(x)), 1)))

    ln = LayerNorm(d.d_t)
    ln.gamma.data = rng.uniform(ln.gamma.shape, 0.5, 1.5).astype(np.float32)
    ln.beta.data = rng.normal(ln.beta.shape).astype(np.float32)
    (xt,) = _inputs(rng, (batch, d.l_t, d.d_t))
    entries.append(SuiteEntry("layer_norm", ln, lambda: _weighted_sum(ln(_t(xt)), 2)))

    mlp = Mlp(d.d_t, rng)
    entries.append(SuiteEntry("mlp", mlp, lambda: _weighted_sum(mlp(_t(xt)), 3)))

    cma = MultiHeadCMA(d.d_i, d.d_t, rng, num_heads=4)
    entries.append(SuiteEntry("cross_attention", cma, lambda: _weighted_sum(cma(_t(x), _t(xt)), 4)))
    sa = MultiHeadCMA(d.d_t, d.d_t, rng, num_heads=4)
    entries.append(SuiteEntry("self_attention", sa, lambda: _weighted_sum(sa(_t(xt), _t(xt)), 5)))

    conv2 = Conv2d(1, 4, 3, rng)
    (grid,) = _inputs(rng, (batch, 6, 7, 1))
    entries.append(SuiteEntry("conv2d+maxpool", conv2,
                              lambda: _weighted_sum(maxpool_forward(ops.relu(conv2(_t(grid)))), 6)))
    conv1 = Conv1d(d.d_t, 4, 3, rng)
    entries.append(SuiteEntry("conv1d", conv1, lambda: _weighted_sum(conv1(_t(xt)), 7)))

    for variant in Variant:
        layer = DualAttentionLayer(d.d_t, d.d_i, rng, variant)
        entries.append(SuiteEntry(
            f"dual_attention_layer[{variant.value}]", layer,
            lambda layer=layer: ops.add(*(_weighted_sum(o, 8 + i) for i, o in enumerate(layer(_t(xt), _t(x))))),
        ))

    head = PredictionHead(d.d_t + d.d_i, num_classes, rng, hidden=16)
    (pooled,) = _inputs(rng, (batch, d.d_t + d.d_i))
    entries.append(SuiteEntry("prediction_head", head, lambda: _weighted_sum(head(_t(pooled)), 10)))

    labels = np.arange(batch) % num_classes
    for variant in Variant:
        model = FusionModel(d, num_classes, variant, seed=seed)
        entries.append(SuiteEntry(
            f"fusion[{variant.value}]", model,
            lambda model=model: ops.cross_entropy(model(_t(xt), _t(x), training=False), labels),
        ))
    for kind, cls in BASELINES.items():
        model = cls(d, num_classes, seed)
        entries.append(SuiteEntry(
            kind, model, lambda model=model: ops.cross_entropy(model(_t(xt), _t(x), training=False), labels),
        ))
    return entries


def run_suite(mode: str = "f32", max_entries: Optional[int] = 8, seed: int = 0,
              dims: Dims = MICRO_DIMS) -> dict:
    """Check every suite entry; returns a JSON-ready report."""
    tol = TOLERANCE[mode]
    results = []
    for entry in suite(dims, seed=seed):
        named = list(entry.module.named_parameters())
        report = grad_check(entry.loss, [p for _, p in named], tol=tol, mode=mode,
                            max_entries=max_entries, seed=seed, names=[n for n, _ in named])
        results.append({"name": entry.name, **report.to_dict()})
    return {
        "mode": mode,
        "tol": tol,
        "dims": dims.to_dict(),
        "passed": all(r["passed"] for r in results),
        "checks": results,
    }
