"""Reverse-mode tensor engine: values, the operation record, and backward.

Every differentiable primitive records itself on a per-thread operation
record while gradients are enabled.  ``backward`` replays the recorded
adjoints in exact reverse execution order and consumes the record, so a
record is used at most once.  Distinct threads own distinct records and
never share mutable state.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import ShapeError

__all__ = [
    "Tensor",
    "Parameter",
    "backward",
    "no_grad",
    "grad_enabled",
    "record",
    "collect_kinks",
    "ShapeError",
]


class _ThreadState(threading.local):
    def __init__(self):
        self.entries: list[_RecordEntry] = []
        self.grad_enabled: bool = True
        self.kinks: Optional[list[np.ndarray]] = None


_STATE = _ThreadState()


class _RecordEntry:
    """One executed primitive: inputs, output, and its adjoint closure."""

    __slots__ = ("op", "inputs", "output", "adjoint")

    def __init__(self, op: str, inputs: Sequence["Tensor"], output: "Tensor",
                 adjoint: Callable[[np.ndarray], None]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.adjoint = adjoint


class Tensor:
    """N-dimensional real array with an optional gradient accumulator.

    ``data`` is a numpy float array (float64 for tests, float32 is fine
    for training).  ``grad`` is populated by :func:`backward` for every
    leaf with ``requires_grad`` that the loss depends on.  A tensor is
    immutable after construction except for gradient accumulation and
    explicit parameter updates between steps.
    """

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A non-recorded view of the same values."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    # Small amount of operator sugar for tests and losses; every dunder
    # routes through a recorded primitive in ops.py.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def sum(self) -> "Tensor":
        from . import ops
        return ops.sum_all(self)

    def mean(self) -> "Tensor":
        from . import ops
        return ops.mean_all(self)

    def __repr__(self) -> str:
        flags = []
        if self.requires_grad:
            flags.append("requires_grad")
        if self.grad is not None:
            flags.append("grad")
        tail = (", " + ", ".join(flags)) if flags else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{tail})"


class Parameter(Tensor):
    """Trainable leaf tensor.

    ``decay`` marks whether the weight-decay term applies; biases and
    normalization scales set it to False.
    """

    def __init__(self, data, decay: bool = True, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.decay = bool(decay)


def grad_enabled() -> bool:
    return _STATE.grad_enabled


@contextmanager
def no_grad():
    """Disable recording inside the block (inference, data paths)."""
    prev = _STATE.grad_enabled
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = prev


def record(op: str, inputs: Sequence[Tensor], output: Tensor,
           adjoint: Callable[[np.ndarray], None]) -> Tensor:
    """Register ``output`` on the active record if any input needs grads."""
    if _STATE.grad_enabled and any(
            isinstance(t, Tensor) and t.requires_grad for t in inputs):
        output.requires_grad = True
        _STATE.entries.append(_RecordEntry(op, tuple(inputs), output, adjoint))
    return output


def accumulate(t, g: np.ndarray) -> None:
    """Add ``g`` into ``t.grad``; gradients add across reuses of a tensor."""
    if not (isinstance(t, Tensor) and t.requires_grad):
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Populate d(loss)/d(leaf) for every leaf the scalar loss depends on.

    Consumes the thread's operation record: adjoints run in exact reverse
    execution order, and the record is cleared afterwards.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor loss")
    if loss.ndim != 0:
        raise ShapeError(
            f"backward requires a scalar loss, got shape {loss.shape}")
    entries = _STATE.entries
    _STATE.entries = []
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for entry in reversed(entries):
        g = entry.output.grad
        if g is None:
            continue
        entry.adjoint(g)


def clear_record() -> None:
    """Drop any recorded-but-unconsumed operations on this thread."""
    _STATE.entries = []


def record_length() -> int:
    return len(_STATE.entries)


@contextmanager
def collect_kinks():
    """Collect kink signatures (relu signs, clamp masks) during forwards.

    Used by the gradient checker to detect evaluations whose perturbation
    crosses a non-differentiable point.  Yields a list of
    ``(pattern, margin)`` pairs: the boolean side-of-kink pattern and the
    smallest distance of any element to the kink.
    """
    prev = _STATE.kinks
    sink: list[tuple[np.ndarray, float]] = []
    _STATE.kinks = sink
    try:
        yield sink
    finally:
        _STATE.kinks = prev


def note_kink(pattern: np.ndarray, margin: float) -> None:
    if _STATE.kinks is not None:
        _STATE.kinks.append((pattern, margin))


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def same_shape(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{name}: operand shapes {a.shape} and {b.shape} "
                         f"differ; only identical-shape operands are supported")


def iter_tensors(xs: Iterable) -> Iterable[Tensor]:
    for x in xs:
        if isinstance(x, Tensor):
            yield x
