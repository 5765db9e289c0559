"""Dense tensors with tape-free reverse-mode differentiation.

Each ``Tensor`` produced by an op keeps references to its parents and a
closure that pushes its gradient back to them. ``backward`` walks the graph
in reverse topological order. Training runs in float32; gradient checks run
the same graph in float64.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class NumericError(FloatingPointError):
    """An op produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


def check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericError(f"{op}: non-finite values in output")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = "",
                 dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- construction ------------------------------------------------------
    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence["Tensor"],
              backward: Callable[[np.ndarray], None], op: str = "") -> "Tensor":
        out = Tensor(check_finite(data, op) if op else data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{', grad' if self.requires_grad else ''})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accum(self, g: np.ndarray) -> None:
        g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    # -- reverse pass ------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
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
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        _SINK.append(grads)
        try:
            for node in reversed(order):
                g = grads.pop(id(node), None)
                if g is None:
                    continue
                if node._backward is None:
                    node._accum(g)
                else:
                    node._backward(g)
        finally:
            _SINK.pop()

    # -- elementwise arithmetic -------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def bw(g):
            _send(a, g)
            _send(b, g)

        return Tensor._make(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self
        return Tensor._make(-a.data, (a,), lambda g: _send(a, -g))

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other, self.dtype))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other, self.dtype) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                _send(a, g * b.data)
            if b.requires_grad:
                _send(b, g * a.data)

        return Tensor._make(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                _send(a, g / b.data)
            if b.requires_grad:
                _send(b, -g * a.data / (b.data * b.data))

        return Tensor._make(a.data / b.data, (a, b), bw, "div")

    def __pow__(self, p: float) -> "Tensor":
        a = self
        return Tensor._make(a.data ** p, (a,),
                            lambda g: _send(a, g * p * a.data ** (p - 1)), "pow")

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                _send(a, g @ np.swapaxes(b.data, -1, -2))
            if b.requires_grad:
                _send(b, np.swapaxes(a.data, -1, -2) @ g)

        return Tensor._make(a.data @ b.data, (a, b), bw)

    def exp(self) -> "Tensor":
        a = self
        out = np.exp(a.data)
        return Tensor._make(out, (a,), lambda g: _send(a, g * out), "exp")

    def log(self) -> "Tensor":
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: _send(a, g / a.data), "log")

    # -- reductions and reshaping -----------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _send(a, np.broadcast_to(g, a.shape))

        return Tensor._make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._make(a.data.reshape(shape), (a,),
                            lambda g: _send(a, g.reshape(a.shape)))

    def transpose(self, *axes) -> "Tensor":
        a = self
        inv = np.argsort(axes)
        return Tensor._make(a.data.transpose(axes), (a,),
                            lambda g: _send(a, g.transpose(inv)))


class Parameter(Tensor):
    """Named leaf tensor updated by the optimizer; ``trainable=False`` freezes it."""

    __slots__ = ("trainable",)

    def __init__(self, data, name: str = "", trainable: bool = True, dtype=None):
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)
        self.trainable = trainable

    def __repr__(self) -> str:
        flag = "" if self.trainable else ", frozen"
        return f"Parameter({self.name!r}, shape={self.shape}{flag})"

    def zero_grad(self) -> None:
        self.grad = None


# gradient buffers of the backward passes in flight, innermost last
_SINK: list[dict[int, np.ndarray]] = []


def _send(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.data.shape)
    buf = _SINK[-1]
    key = id(t)
    if key in buf:
        buf[key] = buf[key] + g
    else:
        buf[key] = g


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float32))


def parameters_of(objs: Iterable) -> list[Parameter]:
    out: list[Parameter] = []
    for o in objs:
        out.extend(o.parameters())
    return out
