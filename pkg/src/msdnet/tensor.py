"""Dense tensor with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Every differentiable operation records
its parents and a closure mapping the upstream gradient to one gradient per
parent; :meth:`Tensor.backward` walks the graph in reverse topological order.

Training runs in float32. Gradient checks switch to float64 with
:func:`precision`.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ConfigError",
    "precision",
    "get_dtype",
    "no_grad",
    "grad_enabled",
    "corrupt_backward",
    "tensor",
    "zeros",
    "ones",
]


class ConfigError(ValueError):
    """Raised for shape or hyperparameter combinations that cannot work."""


_state = threading.local()


def _get(name, default):
    return getattr(_state, name, default)


def get_dtype() -> np.dtype:
    return _get("dtype", np.dtype(np.float32))


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the default dtype (``"fp32"`` or ``"fp64"``)."""
    dtypes = {"fp32": np.float32, "fp64": np.float64}
    if name not in dtypes:
        raise ConfigError(f"unknown precision {name!r}; expected one of {sorted(dtypes)}")
    old = get_dtype()
    _state.dtype = np.dtype(dtypes[name])
    try:
        yield
    finally:
        _state.dtype = old


def grad_enabled() -> bool:
    return _get("grad", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording the graph."""
    old = grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = old


# Test hook: op name -> factor applied to that op's parent gradients.
_corruptions: dict[str, float] = {}


@contextlib.contextmanager
def corrupt_backward(op: str, factor: float = 1.01) -> Iterator[None]:
    """Deliberately scale the backward pass of ``op`` (negative control for grad checks)."""
    _corruptions[op] = factor
    try:
        yield
    finally:
        _corruptions.pop(op, None)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """An n-dimensional array that optionally tracks gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or get_dtype())
        if arr.ndim > 5:
            raise ConfigError(f"tensors carry at most 5 axes, got shape {arr.shape}")
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self.op = "leaf"

    # -- construction of graph nodes -------------------------------------------------

    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        out.requires_grad = grad_enabled() and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties ------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
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

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # -- autodiff --------------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar tensor, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward on a tensor that does not require grad")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            factor = _corruptions.get(node.op)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if factor is not None:
                    pg = pg * factor
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar --------------------------------------------------------------

    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def __getitem__(self, idx):
        from . import ops

        return ops.getitem(self, idx)

    def sum(self):
        from . import ops

        return ops.sum_all(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(*shape: int, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=get_dtype()), requires_grad=requires_grad)


def ones(*shape: int, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=get_dtype()), requires_grad=requires_grad)
