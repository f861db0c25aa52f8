"""Minimal tape-based reverse-mode automatic differentiation on numpy arrays.

Only the operations the flow model needs are provided. Broadcasting follows
numpy; gradients are summed back to each operand's shape. Functions in this
module accept plain arrays as well and then return plain arrays, so the same
model code runs with and without a tape.
"""

import numpy as np


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    nlead = grad.ndim - len(shape)
    if nlead:
        grad = grad.sum(axis=tuple(range(nlead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Var:
    """A node of the computation graph holding ``value`` and, after
    :func:`backward`, the accumulated ``grad``."""

    __slots__ = ("value", "grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    # arithmetic --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return mul(other, reciprocal(self))

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _val(x):
    return x.value if isinstance(x, Var) else x


def _node(value, parents, backward):
    if not any(isinstance(p, Var) for p in parents):
        return value
    return Var(value, tuple(p for p in parents if isinstance(p, Var)), backward)


def _acc(v, g):
    if isinstance(v, Var):
        g = _unbroadcast(g, v.value.shape)
        v.grad = g if v.grad is None else v.grad + g


def add(a, b):
    out = _val(a) + _val(b)

    def back(g):
        _acc(a, g)
        _acc(b, g)

    return _node(out, (a, b), back)


def neg(a):
    return _node(-_val(a), (a,), lambda g: _acc(a, -g))


def mul(a, b):
    av, bv = _val(a), _val(b)

    def back(g):
        _acc(a, g * bv)
        _acc(b, g * av)

    return _node(av * bv, (a, b), back)


def reciprocal(a):
    av = _val(a)
    out = 1.0 / av
    return _node(out, (a,), lambda g: _acc(a, -g * out * out))


def square(a):
    av = _val(a)
    return _node(av * av, (a,), lambda g: _acc(a, 2.0 * g * av))


def exp(a):
    out = np.exp(_val(a))
    return _node(out, (a,), lambda g: _acc(a, g * out))


def log(a):
    av = _val(a)
    return _node(np.log(av), (a,), lambda g: _acc(a, g / av))


def tanh(a):
    out = np.tanh(_val(a))
    return _node(out, (a,), lambda g: _acc(a, g * (1.0 - out * out)))


def clip(a, lo, hi):
    """Clamp with zero gradient outside ``[lo, hi]``."""
    av = _val(a)
    mask = (av >= lo) & (av <= hi)
    return _node(np.clip(av, lo, hi), (a,), lambda g: _acc(a, g * mask))


def where(cond, a, b):
    """Select with a constant boolean (or 0/1) mask."""
    cond = np.asarray(cond, dtype=bool)
    av, bv = _val(a), _val(b)

    def back(g):
        _acc(a, np.where(cond, g, 0.0))
        _acc(b, np.where(cond, 0.0, g))

    return _node(np.where(cond, av, bv), (a, b), back)


def total(a, axis=None, keepdims=False):
    av = _val(a)
    out = av.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, av.shape))

    return _node(out, (a,), back)


def mean(a, axis=None):
    av = _val(a)
    count = av.size if axis is None else av.shape[axis]
    return mul(total(a, axis=axis), 1.0 / count)


def _is_basic(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def matmul(a, b):
    """Batched matrix product over the last two axes."""
    av, bv = _val(a), _val(b)

    def back(g):
        if isinstance(a, Var):
            _acc(a, g @ np.swapaxes(bv, -1, -2))
        if isinstance(b, Var):
            _acc(b, np.swapaxes(av, -1, -2) @ g)

    return _node(av @ bv, (a, b), back)


def getitem(a, idx):
    av = _val(a)

    def back(g):
        full = np.zeros_like(av)
        if _is_basic(idx):
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        _acc(a, full)

    return _node(av[idx], (a,), back)


def backward(root):
    """Accumulate d(root)/d(node) into ``node.grad`` for every ancestor."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
