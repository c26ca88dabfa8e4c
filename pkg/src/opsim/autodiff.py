"""Reverse-mode automatic differentiation over numpy arrays.

A small tape: each op returns a `Tensor` holding its value, its parents,
and a closure that routes the output gradient to each parent.  Gradients
are exact (double precision), validated against central finite
differences in the test suite.  Only the ops needed by the dense network
and the small transformer are provided.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np


class Tensor:
    """A node in the computation graph wrapping an ndarray value."""

    __slots__ = ("value", "parents", "backward_fns", "grad", "requires_grad")

    def __init__(self, value, parents=(), backward_fns=(), requires_grad=False):
        self.value = np.asarray(value, dtype=float)
        self.parents = parents
        self.backward_fns = backward_fns
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __pow__(self, exponent):
        return power(self, float(exponent))

    def __getitem__(self, key):
        return take(self, key)


def param(value) -> Tensor:
    """A leaf tensor that accumulates gradient."""
    return Tensor(np.asarray(value, dtype=float), requires_grad=True)


def constant(value) -> Tensor:
    return Tensor(np.asarray(value, dtype=float))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _node(value, parents, grads) -> Tensor:
    """Build an op node; `grads` maps the output grad to each parent grad."""
    return Tensor(value, parents=tuple(parents), backward_fns=tuple(grads))


# ---------------------------------------------------------------------------
# Elementwise and reduction ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    return _node(
        a.value + b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g, a.value.shape),
            lambda g: _unbroadcast(g, b.value.shape),
        ),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _node(
        a.value - b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g, a.value.shape),
            lambda g: _unbroadcast(-g, b.value.shape),
        ),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _node(
        a.value * b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.value, a.value.shape),
            lambda g: _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    return _node(
        a.value / b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g / b.value, a.value.shape),
            lambda g: _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        ),
    )


def power(a: Tensor, exponent: float) -> Tensor:
    return _node(
        a.value**exponent,
        (a,),
        (lambda g: g * exponent * a.value ** (exponent - 1.0),),
    )


def sqrt(a: Tensor) -> Tensor:
    return power(a, 0.5)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)
    return _node(out, (a,), (lambda g: g * out,))


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.value), (a,), (lambda g: g / a.value,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)
    return _node(out, (a,), (lambda g: g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = np.empty_like(a.value)
    pos = a.value >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.value[pos]))
    ez = np.exp(a.value[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _node(out, (a,), (lambda g: g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return _node(a.value * mask, (a,), (lambda g: g * mask,))


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GELU, composed from primitive ops."""
    c = math.sqrt(2.0 / math.pi)
    inner = tanh((a + power(a, 3.0) * 0.044715) * c)
    return a * (inner + 1.0) * 0.5


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Gradient flows only where the input is strictly inside [lo, hi]."""
    mask = (a.value >= lo) & (a.value <= hi)
    return _node(np.clip(a.value, lo, hi), (a,), (lambda g: g * mask,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    amin = a.value <= b.value
    return _node(
        np.minimum(a.value, b.value),
        (a, b),
        (
            lambda g: _unbroadcast(g * amin, a.value.shape),
            lambda g: _unbroadcast(g * ~amin, b.value.shape),
        ),
    )


def total(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Sum over `axis` (numpy semantics)."""
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.value.shape).copy()

    return _node(out, (a,), (back,))


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.value.size if axis is None else a.value.shape[axis]
    return total(a, axis=axis, keepdims=keepdims) * (1.0 / n)


# ---------------------------------------------------------------------------
# Shape and indexing ops
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    old = a.value.shape
    return _node(a.value.reshape(shape), (a,), (lambda g: g.reshape(old),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return _node(
        np.swapaxes(a.value, ax1, ax2), (a,), (lambda g: np.swapaxes(g, ax1, ax2),)
    )


def take(a: Tensor, key) -> Tensor:
    """Slice / integer-array indexing with scatter-add backward."""
    out = a.value[key]

    def back(g):
        acc = np.zeros_like(a.value)
        np.add.at(acc, key, g)
        return acc

    return _node(out, (a,), (back,))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back_for(i):
        def back(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            return g[tuple(index)]

        return back

    return _node(
        np.concatenate([t.value for t in tensors], axis=axis),
        tuple(tensors),
        tuple(back_for(i) for i in range(len(tensors))),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.value @ b.value

    def back_a(g):
        return _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.value.shape)

    def back_b(g):
        return _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.value.shape)

    return _node(out, (a, b), (back_a, back_b))


# ---------------------------------------------------------------------------
# Softmax family
# ---------------------------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - dot)

    return _node(out, (a,), (back,))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def back(g):
        return g - soft * g.sum(axis=axis, keepdims=True)

    return _node(out, (a,), (back,))


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def backward(root: Tensor) -> None:
    """Accumulate gradients of the scalar `root` into each requiring leaf."""
    if root.value.size != 1:
        raise ValueError("backward expects a scalar loss")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, fn in zip(node.parents, node.backward_fns):
            if not parent.requires_grad:
                continue
            pg = fn(g)
            if parent.grad is None:
                parent.grad = pg
            else:
                parent.grad = parent.grad + pg


def grad_of(loss: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
    """Convenience: zero grads, run backward, return leaf gradients."""
    for leaf in leaves:
        leaf.grad = None
    backward(loss)
    return [
        leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        for leaf in leaves
    ]
