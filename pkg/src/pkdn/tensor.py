"""4-D tensors, parameters and an explicit single-use gradient tape.

A :class:`Tape` records every operation whose inputs require gradients while
it is the active tape.  ``tape.backward(loss)`` walks the records once, in
reverse creation order, and accumulates gradients into the ``grad`` buffer of
every reachable leaf (plain tensors created with ``requires_grad=True`` and
:class:`Parameter` objects).  A tape cannot be replayed.

Outside an active tape no graph is recorded, which doubles as inference mode.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "TapeError",
    "ShapeError",
    "backward",
    "element_mode",
    "get_dtype",
    "set_dtype",
    "active_tape",
    "no_grad",
]

_DTYPES = {"float32": np.float32, "float64": np.float64, "32": np.float32, "64": np.float64}


class ShapeError(ValueError):
    """Raised when an operand has the wrong shape; names the offending dimension."""


class TapeError(RuntimeError):
    pass


class _State(threading.local):
    def __init__(self):
        self.dtype = np.float32
        self.tape: Optional[Tape] = None


_state = _State()


def get_dtype():
    return _state.dtype


def set_dtype(mode) -> None:
    """Select the element type for new tensors: "float32"/"32" or "float64"/"64"."""
    if isinstance(mode, str):
        try:
            _state.dtype = _DTYPES[mode]
        except KeyError:
            raise ValueError(f"unknown element mode {mode!r}") from None
    else:
        dt = np.dtype(mode).type
        if dt not in (np.float32, np.float64):
            raise ValueError(f"unsupported element type {mode!r}")
        _state.dtype = dt


@contextmanager
def element_mode(mode):
    prev = _state.dtype
    set_dtype(mode)
    try:
        yield
    finally:
        _state.dtype = prev


class Tensor:
    """Immutable (n, c, h, w) array with optional gradient tracking.

    ``grad`` is only populated for leaves that require gradients.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape", "_node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or get_dtype())
        if arr.ndim != 4:
            raise ShapeError(f"tensors are 4-D (n, c, h, w); got ndim={arr.ndim}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None
        self._node: Optional[int] = None

    @classmethod
    def _result(cls, data: np.ndarray) -> "Tensor":
        # fast path for op outputs: skip dtype coercion
        t = object.__new__(Tensor)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t._tape = None
        t._node = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._result(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; the op implementations live in pkdn.ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)


class Parameter(Tensor):
    """A trainable leaf: value plus gradient accumulator and Adam moment slots."""

    __slots__ = ("name", "m", "v")

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)

    @property
    def value(self) -> Tensor:
        return self

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def freeze(self) -> None:
        self.requires_grad = False

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Records operations for one forward pass; ``backward`` consumes it."""

    def __init__(self):
        self._parents: list = []
        self._fns: list = []
        self._shapes: list = []
        self.consumed = False
        self._prev: Optional[Tape] = None

    def __len__(self):
        return len(self._fns)

    def __enter__(self) -> "Tape":
        if self.consumed:
            raise TapeError("tape already consumed")
        self._prev = _state.tape
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._prev
        self._prev = None
        return False

    def record(self, out: Tensor, parents: Sequence[Tensor], fn: BackwardFn) -> Tensor:
        if self.consumed:
            raise TapeError("cannot record on a consumed tape")
        out.requires_grad = True
        out._tape = self
        out._node = len(self._fns)
        self._parents.append(tuple(parents))
        self._fns.append(fn)
        self._shapes.append(out.data.shape)
        return out

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise TapeError("backward called on a consumed tape")
        if loss.shape != (1, 1, 1, 1):
            raise ShapeError(f"backward needs a scalar (1,1,1,1) loss, got {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss was not produced on this tape")
        grads: dict = {loss._node: np.ones_like(loss.data)}
        # creation order is a topological order, so reverse it
        for idx in range(len(self._fns) - 1, -1, -1):
            g = grads.pop(idx, None)
            if g is None:
                continue
            parent_grads = self._fns[idx](g)
            for parent, pg in zip(self._parents[idx], parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._node is not None and parent._tape is self:
                    prev = grads.get(parent._node)
                    grads[parent._node] = pg if prev is None else prev + pg
                elif parent.is_leaf:
                    if parent.grad is None:
                        parent.grad = np.zeros_like(parent.data)
                    parent.grad += pg
        self.consumed = True
        self._parents.clear()
        self._fns.clear()


def active_tape() -> Optional[Tape]:
    return _state.tape


@contextmanager
def no_grad():
    prev = _state.tape
    _state.tape = None
    try:
        yield
    finally:
        _state.tape = prev


def backward(loss: Tensor) -> None:
    """Backpropagate ``loss`` through the tape that produced it."""
    tape = loss._tape
    if tape is None:
        raise TapeError("loss carries no tape; compute it inside `with Tape():`")
    tape.backward(loss)
