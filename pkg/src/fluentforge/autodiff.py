"""Tape-based reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced; calling
``backward()`` on a scalar walks the tape in reverse topological order and
accumulates gradients into every reachable Tensor with ``requires_grad``.
Dtype follows the inputs, so the same graph can run in float32 for training
and float64 for finite-difference checks.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _node(data, parents, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data, dtype=np.float64 if self.data.dtype == np.float64 else self.data.dtype)
        self.grad = self.grad + g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo, seen = [], set()

        def visit(t):
            stack = [(t, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    topo.append(node)
                    continue
                if id(node) in seen or not node.requires_grad:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for p in node._parents:
                    stack.append((p, False))

        visit(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if not parent.requires_grad:
                        continue
                    if id(parent) in grads:
                        grads[id(parent)] = grads[id(parent)] + pg
                    else:
                        grads[id(parent)] = pg
            if node._parents == () or node._backward is None:
                node._accumulate(g)

    def zero_grad(self):
        self.grad = None

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Sum gradient g down to the given broadcast-source shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    def backward(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))
    return Tensor._node(a.data + b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    def backward(g):
        return ((a, _unbroadcast(g * b.data, a.data.shape)),
                (b, _unbroadcast(g * a.data, b.data.shape)))
    return Tensor._node(a.data * b.data, (a, b), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ((a, _unbroadcast(ga, a.data.shape)), (b, _unbroadcast(gb, b.data.shape)))
    return Tensor._node(a.data @ b.data, (a, b), backward)


def power(a, exponent):
    a = as_tensor(a)
    def backward(g):
        return ((a, g * exponent * a.data ** (exponent - 1)),)
    return Tensor._node(a.data ** exponent, (a,), backward)


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)
    def backward(g):
        return ((a, g * out_data),)
    return Tensor._node(out_data, (a,), backward)


def log(a):
    a = as_tensor(a)
    def backward(g):
        return ((a, g / a.data),)
    return Tensor._node(np.log(a.data), (a,), backward)


def tanh(a):
    a = as_tensor(a)
    out_data = np.tanh(a.data)
    def backward(g):
        return ((a, g * (1.0 - out_data ** 2)),)
    return Tensor._node(out_data, (a,), backward)


def sigmoid(a):
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))
    def backward(g):
        return ((a, g * out_data * (1.0 - out_data)),)
    return Tensor._node(out_data, (a,), backward)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    def backward(g):
        return ((a, g * mask),)
    return Tensor._node(a.data * mask, (a,), backward)


def sqrt(a):
    return power(a, 0.5)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)
    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(g, a.data.shape).copy()),)
    return Tensor._node(out_data, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    def backward(g):
        return ((a, g.reshape(a.data.shape)),)
    return Tensor._node(a.data.reshape(shape), (a,), backward)


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(axes)
    def backward(g):
        return ((a, g.transpose(inv)),)
    return Tensor._node(a.data.transpose(axes), (a,), backward)


def getitem(a, key):
    a = as_tensor(a)
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return ((a, full),)
    return Tensor._node(a.data[key], (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    def backward(g):
        out = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            out.append((t, g[tuple(idx)]))
        return tuple(out)
    return Tensor._node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        return tuple((t, parts[i]) for i, t in enumerate(tensors))
    return Tensor._node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def pad(a, pad_width):
    """Zero padding; pad_width as for np.pad."""
    a = as_tensor(a)
    def backward(g):
        idx = tuple(slice(lo, g.shape[i] - hi if hi else None)
                    for i, (lo, hi) in enumerate(pad_width))
        return ((a, g[idx]),)
    return Tensor._node(np.pad(a.data, pad_width), (a,), backward)


def absolute(a):
    a = as_tensor(a)
    sign = np.sign(a.data)
    def backward(g):
        return ((a, g * sign),)
    return Tensor._node(np.abs(a.data), (a,), backward)


def maximum_scalar(a, value):
    a = as_tensor(a)
    mask = a.data >= value
    def backward(g):
        return ((a, g * mask),)
    return Tensor._node(np.maximum(a.data, value), (a,), backward)


def dropout(a, p, rng):
    """Inverted dropout; active whenever called (callers decide when)."""
    a = as_tensor(a)
    if p <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p) / (1.0 - p)
    return mul(a, keep)
