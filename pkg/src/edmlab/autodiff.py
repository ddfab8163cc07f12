"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps a float64 ndarray plus enough graph structure to run
backpropagation: the tensors it was computed from and a closure that routes
the output gradient to them.  Graphs are built eagerly by operator
overloading; ``backward()`` on a scalar walks the graph once in reverse
topological order.

Only the operations needed by the training objectives are implemented:
elementwise arithmetic, matrix multiply, rectifier, exp/log, value clipping,
constant powers, and axis reductions.  Broadcasting follows numpy rules;
gradients of broadcast operands are summed back to the operand's shape.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A node in the backward graph: value, accumulated gradient, parents."""

    __slots__ = ("value", "grad", "_parents", "_backprop")

    # Make ndarray <op> Tensor defer to our reflected operators instead of
    # silently coercing the Tensor into an object array.
    __array_ufunc__ = None

    def __init__(self, value, parents=(), backprop=None):
        self.value = _as_array(value)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(parents)
        self._backprop = backprop

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, leaf={self._backprop is None})"

    # -- graph construction helpers ------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other)
        out = Tensor(self.value + other.value, (self, other))

        def backprop():
            self.grad += _unbroadcast(out.grad, self.shape)
            other.grad += _unbroadcast(out.grad, other.shape)

        out._backprop = backprop
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.value, (self,))

        def backprop():
            self.grad -= out.grad

        out._backprop = backprop
        return out

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other)
        out = Tensor(self.value * other.value, (self, other))

        def backprop():
            self.grad += _unbroadcast(out.grad * other.value, self.shape)
            other.grad += _unbroadcast(out.grad * self.value, other.shape)

        out._backprop = backprop
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)
        out = Tensor(self.value / other.value, (self, other))

        def backprop():
            self.grad += _unbroadcast(out.grad / other.value, self.shape)
            other.grad += _unbroadcast(
                -out.grad * self.value / (other.value * other.value), other.shape
            )

        out._backprop = backprop
        return out

    def __rtruediv__(self, other):
        return Tensor._lift(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only constant exponents are supported")
        out = Tensor(self.value ** exponent, (self,))

        def backprop():
            self.grad += out.grad * exponent * self.value ** (exponent - 1)

        out._backprop = backprop
        return out

    def __matmul__(self, other):
        other = Tensor._lift(other)
        if self.value.ndim != 2 or other.value.ndim != 2:
            raise ValueError("matmul supports 2-D operands only")
        out = Tensor(self.value @ other.value, (self, other))

        def backprop():
            self.grad += out.grad @ other.value.T
            other.grad += self.value.T @ out.grad

        out._backprop = backprop
        return out

    # -- nonlinearities and guards -------------------------------------

    def relu(self):
        out = Tensor(np.maximum(self.value, 0.0), (self,))
        mask = self.value > 0.0

        def backprop():
            self.grad += out.grad * mask

        out._backprop = backprop
        return out

    def exp(self):
        out = Tensor(np.exp(self.value), (self,))

        def backprop():
            self.grad += out.grad * out.value

        out._backprop = backprop
        return out

    def log(self):
        out = Tensor(np.log(self.value), (self,))

        def backprop():
            self.grad += out.grad / self.value

        out._backprop = backprop
        return out

    def clip_min(self, floor: float):
        """max(x, floor); gradient flows only where x exceeds the floor."""
        out = Tensor(np.maximum(self.value, floor), (self,))
        mask = self.value > floor

        def backprop():
            self.grad += out.grad * mask

        out._backprop = backprop
        return out

    # -- reductions ----------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.value.sum(axis=axis, keepdims=keepdims), (self,))

        def backprop():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self.grad += np.broadcast_to(g, self.shape)

        out._backprop = backprop
        return out

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.value.size
        else:
            count = self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- backward pass -------------------------------------------------

    def topo_order(self) -> list["Tensor"]:
        """All reachable tensors, parents before children (iterative DFS)."""
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
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Populate ``grad`` on every tensor this scalar depends on."""
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar loss")
        order = self.topo_order()
        for node in order:
            node.grad = np.zeros_like(node.value)
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backprop is not None:
                node._backprop()
