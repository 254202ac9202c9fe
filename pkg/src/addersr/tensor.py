"""Dense 4-D tensors and a small reverse-mode tape.

A :class:`Tensor` wraps a C-contiguous float64 array of shape (n, c, h, w).
Operations executed while a :class:`Tape` is active (``with Tape() as tape``)
are recorded together with a closure mapping the output gradient to input
gradients; :meth:`Tape.backward` replays them in exact reverse order.
"""
from __future__ import annotations

import os
import sys
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError, ParameterError, ShapeError, SizeError, TapeStateError

_DEBUG = os.environ.get("ADDERSR_DEBUG", "") not in ("", "0")
_local = threading.local()


def set_debug(enabled: bool) -> None:
    """Toggle finite-value checks on every recorded forward output."""
    global _DEBUG
    _DEBUG = bool(enabled)


def debug_enabled() -> bool:
    return _DEBUG


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are 4-D (n, c, h, w); got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


def _check_shape(shape) -> tuple[int, int, int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4:
        raise ShapeError(f"expected a 4-tuple of extents, got {shape}")
    if any(s < 0 for s in shape):
        raise ShapeError(f"extents must be non-negative, got {shape}")
    total = 1
    for s in shape:
        total *= s
    if total > sys.maxsize:
        raise SizeError(f"{shape} holds {total} elements, beyond the index range")
    return shape


def tensor_new(shape, fill: float = 0.0, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(_check_shape(shape), float(fill)), requires_grad=requires_grad)


def seeded_uniform(shape, lo: float, hi: float, seed: int, requires_grad: bool = False) -> Tensor:
    """Uniform draws in [lo, hi), reproducible for a fixed seed."""
    if not lo < hi:
        raise ParameterError(f"need lo < hi, got lo={lo}, hi={hi}")
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(lo, hi, size=_check_shape(shape)), requires_grad=requires_grad)


class _Record:
    __slots__ = ("inputs", "output", "backward_fn", "name")

    def __init__(self, inputs, output, backward_fn, name):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.name = name


class Tape:
    """Ordered record of differentiable operations.

    A tape can be replayed once; record a fresh tape for the next step.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.consumed = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def record(self, name: str, inputs: Sequence[Tensor], output: Tensor,
               backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> None:
        if self.consumed:
            raise TapeStateError("cannot record onto a tape that was already replayed")
        self.records.append(_Record(tuple(inputs), output, backward_fn, name))

    def backward(self, loss: Tensor, seed_grad: float = 1.0) -> None:
        if self.consumed:
            raise TapeStateError("tape already consumed by a previous backward pass")
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        produced = {id(r.output) for r in self.records}
        if id(loss) not in produced:
            raise TapeStateError("loss was not produced by an operation on this tape")
        self.consumed = True

        grads = {id(loss): np.full(loss.shape, float(seed_grad))}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            in_grads = rec.backward_fn(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if id(t) in produced:
                    key = id(t)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
                else:
                    t.grad = gi.copy() if t.grad is None else t.grad + gi


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def emit(name: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn) -> Tensor:
    """Wrap a forward result and record it on the active tape if any input needs grad."""
    if _DEBUG and not np.all(np.isfinite(out_data)):
        raise NumericalError(f"non-finite output from {name}", layer=name)
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.record(name, inputs, out, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    return emit("add", (a, b), a.data + b.data,
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return emit("sub", (a, b), a.data - b.data,
                lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return emit("mul", (a, b), a.data * b.data,
                lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return emit("scale", (a,), a.data * c, lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return emit("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def sum_all(a: Tensor) -> Tensor:
    return emit("sum", (a,), np.array(a.data.sum()).reshape(1, 1, 1, 1),
                lambda g: (np.full(a.shape, g.item()),))


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    return emit("mean", (a,), np.array(a.data.sum() / n).reshape(1, 1, 1, 1),
                lambda g: (np.full(a.shape, g.item() / n),))
