"""Dense tensor with reverse-mode automatic differentiation.

Operations record themselves on the active :class:`Tape` when at least one operand
requires a gradient. Without an active tape every op is a pure array function, so
frozen-model inference can run from several threads at once.
"""
from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import ShapeError

DEFAULT_DTYPE = np.float32

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "capsulefusion_tape", default=None
)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    # --- properties ---
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def astype(self, dtype) -> "Tensor":
        out = Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)
        return out

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # --- operators (thin wrappers over ops) ---
    def __add__(self, other):
        from . import ops
        return ops.elementwise("add", self, other)

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        from . import ops
        return ops.elementwise("sub", self, other)

    def __mul__(self, other):
        from . import ops
        return ops.elementwise("mul", self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        from . import ops
        return ops.elementwise("div", self, other)

    def __neg__(self):
        from . import ops
        return ops.elementwise("neg", self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


@dataclass
class Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


@dataclass
class Tape:
    """Ordered log of differentiable operations.

    Records are appended in execution order, so every operand of record ``i`` is either a
    leaf or the output of some record ``j < i``.
    """

    records: list[Record] = field(default_factory=list)
    _token: contextvars.Token | None = field(default=None, repr=False)

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        if self._token is not None:
            _ACTIVE_TAPE.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: Record) -> None:
        self.records.append(record)

    def leaves(self) -> list[Tensor]:
        produced = {id(r.output) for r in self.records}
        seen: dict[int, Tensor] = {}
        for r in self.records:
            for t in r.inputs:
                if t.requires_grad and id(t) not in produced:
                    seen.setdefault(id(t), t)
        return list(seen.values())

    def clear(self) -> None:
        self.records.clear()


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def record(op: str, inputs: Iterable[Tensor], out_data: np.ndarray, backward: BackwardFn) -> Tensor:
    """Wrap ``out_data`` in a Tensor and log the op on the active tape if any operand needs grad."""
    inputs = tuple(inputs)
    needs = any(t.requires_grad for t in inputs)
    tape = active_tape()
    out = Tensor(out_data, requires_grad=needs and tape is not None)
    if out.requires_grad:
        tape.append(Record(op, inputs, out, backward))
    return out


def backward(tape: Tape, loss: Tensor) -> list[Tensor]:
    """Replay ``tape`` in reverse and accumulate gradients into every requires-grad leaf.

    Returns the leaves that took part. Leaves on the tape but off the path to ``loss``
    end with an all-zero gradient. Gradients accumulate across calls until reset.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}", shape=loss.shape)
    if not any(r.output is loss for r in tape.records):
        raise ShapeError("loss is not produced by any record on the tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(r.output) for r in tape.records}
    leaves: dict[int, Tensor] = {}

    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            for t in rec.inputs:
                if t.requires_grad and id(t) not in produced:
                    leaves.setdefault(id(t), t)
            continue
        input_grads = rec.backward(g)
        for t, gi in zip(rec.inputs, input_grads):
            if not t.requires_grad:
                continue
            if id(t) not in produced:
                leaves.setdefault(id(t), t)
            if gi is None:
                continue
            prev = grads.get(id(t))
            grads[id(t)] = gi if prev is None else prev + gi

    for key, leaf in leaves.items():
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
        g = grads.get(key)
        if g is not None:
            leaf.grad = leaf.grad + g.astype(leaf.data.dtype, copy=False)
    return list(leaves.values())
