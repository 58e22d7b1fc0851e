"""A small reverse-mode automatic differentiation core over numpy arrays.

Only what the actor-critic losses need is implemented: broadcasting
arithmetic, matmul, a handful of elementwise nonlinearities and reductions.
Gradients are accumulated into ``Tensor.grad`` by :meth:`Tensor.backward`.
Tensors with ``requires_grad=False`` are treated as constants, and branches
that only lead to constants are skipped entirely.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

ArrayLike = np.ndarray | float | int


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        _parents: tuple[Tensor, ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ) -> None:
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        # never updated in place, so aliasing an upstream array is safe
        self.grad = g if self.grad is None else self.grad + g

    def backward(self, grad: ArrayLike | None = None) -> None:
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
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
        g = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.data.dtype)
        self._accumulate(np.broadcast_to(g, self.shape).astype(self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # interior nodes do not keep their gradient
                    node.grad = None if node is not self else node.grad

    # ------------------------------------------------------------ operators

    def __add__(self, other: Tensor | ArrayLike) -> Tensor:
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Tensor | ArrayLike) -> Tensor:
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other: Tensor | ArrayLike) -> Tensor:
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other: Tensor | ArrayLike) -> Tensor:
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, idx) -> Tensor:
        return getitem(self, idx)


def as_tensor(x: Tensor | ArrayLike, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, tuple(parents) if req else (), backward if req else None)


def add(a: Tensor | ArrayLike, b: Tensor | ArrayLike) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def bw(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: a._accumulate(-g))


def mul(a: Tensor | ArrayLike, b: Tensor | ArrayLike) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def bw(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _result(a.data @ b.data, (a, b), bw)


def getitem(a: Tensor, idx) -> Tensor:
    def bw(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        full[idx] = g
        a._accumulate(full)

    return _result(a.data[idx], (a,), bw)


def concat(ts: Sequence[Tensor], axis: int = -1) -> Tensor:
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def bw(g: np.ndarray) -> None:
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _result(np.concatenate([t.data for t in ts], axis=axis), ts, bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: a._accumulate(g * mask))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: a._accumulate(g * (1 - y * y)))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: a._accumulate(g * y))


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: a._accumulate(g / a.data))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    x = a.data
    y = np.logaddexp(0, x).astype(a.dtype)
    sig = np.exp(x - y)  # sigmoid(x)
    return _result(y, (a,), lambda g: a._accumulate(g * sig))


def square(a: Tensor) -> Tensor:
    return _result(a.data * a.data, (a,), lambda g: a._accumulate(2 * g * a.data))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp with zero gradient outside [lo, hi]."""
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: a._accumulate(g * inside))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise minimum; ties send the gradient to ``a``."""
    pick_a = a.data <= b.data

    def bw(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * pick_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~pick_a, b.shape))

    return _result(np.minimum(a.data, b.data), (a, b), bw)


def sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def bw(g: np.ndarray) -> None:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).astype(a.dtype))

    return _result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis, keepdims), np.asarray(1.0 / n, dtype=a.dtype))
