"""Central finite-difference check of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import NonDeterministicFunctionError
from .rng import Rng
from .tensor import Tape, Tensor, no_grad, precision, trace_branches


@dataclass
class ParamCheck:
    name: str
    shape: tuple
    checked: int
    max_rel_error: float


@dataclass
class GradCheckReport:
    tol: float
    mode: str
    params: list = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "tol": self.tol,
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "params": [
                {"name": p.name, "shape": list(p.shape), "checked": p.checked,
                 "max_rel_error": p.max_rel_error}
                for p in self.params
            ],
        }


def _value(f: Callable[[], Tensor]) -> float:
    with no_grad():
        return float(np.asarray(f().data, dtype=np.float64).reshape(()))


def _traced(f: Callable[[], Tensor]) -> tuple:
    with trace_branches() as branches:
        value = _value(f)
    return value, branches


def _central(f, flat: np.ndarray, i: int, h: float, min_h: float, here: list) -> tuple:
    """Central difference at entry ``i``, shrinking ``h`` while the step crosses a kink.

    A kink is crossed when some piecewise op (ReLU, max-pool) takes a
    different branch at ``p +/- h`` than at ``p`` (``here``). Returns
    ``(estimate, h)``.
    """
    keep = flat[i]
    try:
        while True:
            flat[i] = keep + h
            plus, b_plus = _traced(f)
            flat[i] = keep - h
            minus, b_minus = _traced(f)
            if (b_plus == here and b_minus == here) or h / 10.0 < min_h:
                return (plus - minus) / (2.0 * h), h
            h /= 10.0
    finally:
        flat[i] = keep


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-4,
    min_h: float = 1e-8,
    tol: float = 1e-3,
    mode: str = "f32",
    max_entries: Optional[int] = None,
    seed: int = 0,
    names: Optional[Sequence[str]] = None,
) -> GradCheckReport:
    """Compare tape gradients of ``f`` against ``(f(p+h) - f(p-h)) / 2h``.

    ``f`` must rebuild its graph on every call and return a scalar. The tape
    gradient is computed in ``mode`` precision; the difference quotients are
    always evaluated in float64 so the reference itself is not limited by
    float32 rounding. For each parameter the reported error is
    ``max|g_tape - g_fd| / max(max|g_tape|, max|g_fd|)`` over the checked entries,
    where the tape maximum spans the whole parameter: the error is relative to
    the parameter's gradient scale (0 when both are identically zero).

    A step that flips a ReLU or max-pool branch straddles a kink, where the
    difference quotient is meaningless; such entries are retried with
    ``h / 10`` until no branch flips or ``min_h`` is reached.

    ``max_entries`` caps the number of entries perturbed per parameter; the
    subset is drawn with a seeded PCG32 stream.
    """
    params = list(params)
    names = list(names) if names is not None else [p.name or f"param{i}" for i, p in enumerate(params)]
    originals = [p.data for p in params]
    report = GradCheckReport(tol=tol, mode=mode)
    rng = Rng(seed, stream=7)
    try:
        work = np.float64 if mode == "f64" else np.float32
        for p, orig in zip(params, originals):
            p.data = orig.astype(work)
        with precision(mode):
            with Tape() as tape:
                root = f()
            # a root that never touched a parameter has zero gradient everywhere
            grads = tape.backward(root) if root.requires_grad else {}
        analytic = [np.asarray(grads.get(p, np.zeros(p.shape)), dtype=np.float64) for p in params]

        for p, orig in zip(params, originals):
            p.data = orig.astype(np.float64)
        with precision("f64"):
            base, here = _traced(f)
            if _value(f) != base:
                raise NonDeterministicFunctionError("two evaluations at the same point differ")
            for p, g, name in zip(params, analytic, names):
                flat = p.data.reshape(-1)
                count = flat.size
                if max_entries is not None and count > max_entries:
                    idx = np.sort(rng.permutation(count)[:max_entries])
                else:
                    idx = np.arange(count)
                numeric = np.empty(len(idx))
                for n, i in enumerate(idx):
                    numeric[n], _ = _central(f, flat, i, h, min_h, here)
                tape_vals = g.reshape(-1)[idx]
                scale_ = max(np.max(np.abs(g), initial=0.0), np.max(np.abs(numeric), initial=0.0))
                err = 0.0 if scale_ == 0.0 else float(np.max(np.abs(tape_vals - numeric)) / scale_)
                report.params.append(ParamCheck(name, tuple(p.shape), len(idx), err))
    finally:
        for p, orig in zip(params, originals):
            p.data = orig
    return report
