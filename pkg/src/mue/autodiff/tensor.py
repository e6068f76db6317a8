"""Tensor type and reverse-mode traversal.

Every differentiable op produces a Tensor that remembers its parents and a
closure mapping the output gradient to one gradient per parent. ``backward``
orders the graph topologically (the tape) and walks it once in reverse.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

_state = threading.local()


def _get(name, default):
    return getattr(_state, name, default)


def get_dtype() -> np.dtype:
    """Current floating point precision (float32 unless overridden)."""
    return _get("dtype", np.dtype(np.float32))


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the default dtype, e.g. to float64 for gradient checks."""
    prev = get_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


def grad_enabled() -> bool:
    return _get("grad", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    prev = grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


def debug_enabled() -> bool:
    return _get("debug", False)


def set_debug(flag: bool) -> None:
    """Check every op output for NaN/Inf (slow; meant for tests)."""
    _state.debug = bool(flag)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        # np.ascontiguousarray would promote 0-d scalars to shape (1,)
        arr = np.asarray(data, dtype=dtype or get_dtype())
        self.data = arr if arr.flags.c_contiguous else arr.copy()
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[BackwardFn] = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar, implemented in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, parents: Sequence[Tensor], fn: BackwardFn, op: str) -> Tensor:
    """Wrap an op's forward value; record it on the graph if any parent needs grad."""
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == get_dtype() else data.astype(get_dtype())
    out.grad = None
    out.op = op
    if debug_enabled() and not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"{op}: non-finite value in output")
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def build_tape(root: Tensor) -> list:
    """Nodes reachable from ``root`` in topological order (inputs first)."""
    order: list = []
    seen: set = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor that ``loss`` depends on and requires grad."""
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any tensor requiring grad")
    tape = build_tape(loss)
    seed = np.ones_like(loss.data)
    loss.grad = seed if loss.grad is None else loss.grad + seed
    for node in reversed(tape):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if g.shape != parent.data.shape:
                raise RuntimeError(
                    f"{node.op}: gradient shape {g.shape} != input shape {parent.data.shape}")
            # never accumulate in place: gradient arrays may be shared between parents
            parent.grad = g if parent.grad is None else parent.grad + g
