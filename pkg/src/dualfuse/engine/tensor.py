"""Tensor and tape: the reverse-mode autodiff core.

A :class:`Tape` is activated as a context manager. While it is active, every
op whose inputs include a ``requires_grad`` tensor appends a node holding the
op kind, input ids, output id and a closure over the values it needs for its
backward rule. :meth:`Tape.backward` walks those nodes in reverse recording
order and accumulates gradients into a map keyed by tape id.

Precision: ``float32`` is the working dtype. Inside ``precision("f64")`` every
tensor created (including op outputs) is promoted to ``float64``; that mode
exists for finite-difference gradient checks.

Debug mode (``debug_mode(True)`` or ``DUALFUSE_DEBUG=1``) verifies after
every op that the output is finite.
"""

from __future__ import annotations

import contextlib
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from ..errors import (
    NonFiniteValueError,
    NotOnTapeError,
    NotScalarRootError,
    TapeConsumedError,
)

_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def current_dtype() -> np.dtype:
    return getattr(_local, "dtype", np.dtype(np.float32))


def note_branch(choice: np.ndarray) -> None:
    """Record a piecewise op's discrete choice (sign mask, argmax) when tracing kinks."""
    log = getattr(_local, "branches", None)
    if log is not None:
        log.append(np.ascontiguousarray(choice).tobytes())


@contextlib.contextmanager
def trace_branches() -> Iterator[list]:
    """Collect the branch choices of every piecewise op evaluated in the block."""
    previous = getattr(_local, "branches", None)
    _local.branches = log = []
    try:
        yield log
    finally:
        _local.branches = previous


def is_debug() -> bool:
    flag = getattr(_local, "debug", None)
    if flag is None:
        flag = os.environ.get("DUALFUSE_DEBUG", "") not in ("", "0")
    return flag


@contextlib.contextmanager
def precision(mode: str) -> Iterator[None]:
    """Switch the working dtype (``"f32"`` or ``"f64"``) for the block."""
    dtypes = {"f32": np.dtype(np.float32), "f64": np.dtype(np.float64)}
    if mode not in dtypes:
        raise ValueError(f"unknown precision {mode!r}")
    previous = current_dtype()
    _local.dtype = dtypes[mode]
    try:
        yield
    finally:
        _local.dtype = previous


@contextlib.contextmanager
def debug_mode(enabled: bool = True) -> Iterator[None]:
    previous = getattr(_local, "debug", None)
    _local.debug = enabled
    try:
        yield
    finally:
        _local.debug = previous


def as_array(data) -> np.ndarray:
    """Coerce to a contiguous array of the working dtype.

    float64 input is kept as float64 only in f64 mode; everything else is
    converted to the working dtype.
    """
    arr = np.asarray(data)
    dtype = current_dtype()
    if arr.dtype != dtype:
        arr = arr.astype(dtype)
    # ascontiguousarray would promote 0-d scalars to shape (1,)
    return arr if arr.flags.c_contiguous else arr.copy(order="C")


class Tensor:
    """Dense row-major array with an optional handle on the active tape."""

    __slots__ = ("data", "requires_grad", "tape_id", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = as_array(data)
        self.requires_grad = bool(requires_grad)
        self.tape_id: Optional[int] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad}{label})"

    # operator sugar; semantics live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, other)
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.scale(self, 1.0 / other)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


@dataclass
class Node:
    kind: str
    inputs: tuple  # tape ids, None for inputs that need no gradient
    output: int
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Append-only record of differentiable operations."""

    nodes: list = field(default_factory=list)
    gradients: dict = field(default_factory=dict)
    consumed: bool = False

    def __post_init__(self) -> None:
        self._ids: dict = {}  # id(tensor) -> tape id
        self._tensors: list = []  # keeps registered tensors alive so ids stay unique
        self._leaves: list = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def _register(self, tensor: Tensor) -> int:
        tid = len(self._tensors)
        self._tensors.append(tensor)
        self._ids[id(tensor)] = tid
        tensor.tape_id = tid
        return tid

    def id_of(self, tensor: Tensor) -> Optional[int]:
        tid = self._ids.get(id(tensor))
        if tid is not None and self._tensors[tid] is tensor:
            return tid
        return None

    def _input_id(self, tensor: Tensor) -> Optional[int]:
        if not tensor.requires_grad:
            return None
        tid = self.id_of(tensor)
        if tid is None:
            tid = self._register(tensor)
            self._leaves.append(tid)
        return tid

    def record(self, kind: str, inputs: Sequence[Tensor], out: Tensor, backward) -> None:
        if self.consumed:
            raise TapeConsumedError("cannot record on a tape after backward()")
        ids = tuple(self._input_id(t) for t in inputs)
        out_id = self._register(out)
        self.nodes.append(Node(kind, ids, out_id, backward))

    def backward(self, root: Tensor) -> dict:
        """Reverse accumulation from a scalar root.

        Returns ``{leaf_tensor: gradient}`` for every ``requires_grad`` leaf
        reached. The full per-id map stays on :attr:`gradients`.
        """
        if self.consumed:
            raise TapeConsumedError("backward() already ran on this tape")
        if root.size != 1:
            raise NotScalarRootError(f"root must be scalar, got shape {root.shape}")
        root_id = self.id_of(root)
        if root_id is None:
            raise NotOnTapeError("root was not produced on this tape")
        grads = {root_id: np.ones_like(root.data)}
        for node in reversed(self.nodes):
            g = grads.get(node.output)
            if g is None:
                continue
            input_grads = node.backward(g)
            for tid, ig in zip(node.inputs, input_grads):
                if tid is None or ig is None:
                    continue
                if tid in grads:
                    grads[tid] = grads[tid] + ig
                else:
                    grads[tid] = ig
        self.gradients = grads
        self.consumed = True
        return {self._tensors[tid]: grads[tid] for tid in self._leaves if tid in grads}


def backward(root: Tensor, tape: Tape) -> dict:
    return tape.backward(root)


def active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording (pushes a sentinel so nested ops skip the tape)."""
    stack = _stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


def make_output(kind: str, inputs: Sequence[Tensor], data: np.ndarray, backward_fn) -> Tensor:
    """Wrap an op result and record it when any input needs a gradient."""
    if is_debug() and not np.all(np.isfinite(data)):
        raise NonFiniteValueError(f"non-finite output from {kind}")
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(kind, inputs, out, backward_fn)
    return out
