"""Reverse-mode autodiff over numpy arrays.

Values are stored as float32 by default. Forward matmuls and reductions
accumulate in float64 and round once, which also makes every output row independent of how
many other rows were computed alongside it (streaming and offline passes over
different slice sizes agree bit for bit).

``precision(np.float64)`` switches storage to float64; gradient checks use it
so finite differences are not swamped by float32 rounding.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ShapeError

Tensor = np.ndarray
EXP_CLAMP = 30.0
LN_EPS = 1e-5

_dtype: type = np.float32


@contextlib.contextmanager
def precision(dtype):
    global _dtype
    prev = _dtype
    _dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _dtype = prev


def storage_dtype():
    return _dtype


def _cast(x) -> np.ndarray:
    return np.asarray(x, dtype=_dtype)


VJP = Callable[[np.ndarray, tuple], tuple]


class Node:
    """A value on the gradient tape.

    Leaves (no parents) accumulate gradients across ``backward`` calls;
    interior nodes are reset at the start of every backward pass.
    """

    __slots__ = ("value", "grad", "parents", "vjp", "requires_grad", "name")

    def __init__(self, value, parents: tuple = (), vjp: VJP | None = None,
                 requires_grad: bool = False, name: str | None = None):
        self.value = _cast(value)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Node{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return scale(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, idx): return take(self, idx)

    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)
    def transpose(self, *axes): return transpose(self, axes)
    def sum(self, axis=None): return sum_(self, axis)
    def mean(self, axis=None): return mean(self, axis)


def parameter(value, name: str | None = None) -> Node:
    return Node(value, requires_grad=True, name=name)


def constant(value) -> Node:
    return value if isinstance(value, Node) else Node(value)


def _op(value, parents: Sequence[Node], vjp: VJP) -> Node:
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Node(value)
    return Node(value, parents=parents, vjp=vjp)


def _check_leading_broadcast(a: tuple, b: tuple, opname: str) -> None:
    if a == b:
        return
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    if len(short) == len(long_) or long_[len(long_) - len(short):] != short:
        raise ShapeError(f"{opname}: shapes {a} and {b} differ beyond a leading batch dim")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)), dtype=np.float64).astype(g.dtype)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Node:
    a, b = constant(a), constant(b)
    _check_leading_broadcast(a.shape, b.shape, "add")

    def vjp(g, need):
        return (_unbroadcast(g, a.shape) if need[0] else None,
                _unbroadcast(g, b.shape) if need[1] else None)
    return _op(a.value + b.value, (a, b), vjp)


def sub(a, b) -> Node:
    a, b = constant(a), constant(b)
    _check_leading_broadcast(a.shape, b.shape, "sub")

    def vjp(g, need):
        return (_unbroadcast(g, a.shape) if need[0] else None,
                _unbroadcast(-g, b.shape) if need[1] else None)
    return _op(a.value - b.value, (a, b), vjp)


def mul(a, b) -> Node:
    a, b = constant(a), constant(b)
    _check_leading_broadcast(a.shape, b.shape, "mul")

    def vjp(g, need):
        return (_unbroadcast(g * b.value, a.shape) if need[0] else None,
                _unbroadcast(g * a.value, b.shape) if need[1] else None)
    return _op(a.value * b.value, (a, b), vjp)


def scale(a, c: float) -> Node:
    a = constant(a)
    c = _dtype(c)
    return _op(a.value * c, (a,), lambda g, need: (g * c,))


def exp(a) -> Node:
    """exp with inputs clamped to <= EXP_CLAMP; the clamp has zero gradient."""
    a = constant(a)
    clamped = a.value > EXP_CLAMP
    out = np.exp(np.minimum(a.value, EXP_CLAMP))
    return _op(out, (a,), lambda g, need: (np.where(clamped, 0.0, g * out).astype(out.dtype),))


def silu(a) -> Node:
    a = constant(a)
    x = a.value
    sig = 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))
    out = x * sig

    def vjp(g, need):
        return ((g * (sig * (1.0 + x * (1.0 - sig)))).astype(x.dtype),)
    return _op(out, (a,), vjp)


def layer_norm(a) -> Node:
    """Normalize over the last axis (no affine part)."""
    a = constant(a)
    x = a.value.astype(np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    y = xc * inv

    def vjp(g, need):
        g = g.astype(np.float64)
        gx = inv * (g - g.mean(axis=-1, keepdims=True)
                    - y * (g * y).mean(axis=-1, keepdims=True))
        return (gx.astype(a.value.dtype),)
    return _op(y.astype(a.value.dtype), (a,), vjp)


def softmax(a) -> Node:
    """Softmax over the last axis."""
    a = constant(a)
    if a.ndim == 0 or a.shape[-1] == 0:
        raise ShapeError("softmax over an empty axis")
    x = a.value.astype(np.float64)
    e = np.exp(np.minimum(x - x.max(axis=-1, keepdims=True), EXP_CLAMP))
    p = e / e.sum(axis=-1, keepdims=True)

    def vjp(g, need):
        g = g.astype(np.float64)
        gx = p * (g - (g * p).sum(axis=-1, keepdims=True))
        return (gx.astype(a.value.dtype),)
    return _op(p.astype(a.value.dtype), (a,), vjp)


# ---------------------------------------------------------------- reductions

def sum_(a, axis=None) -> Node:
    a = constant(a)
    out = a.value.sum(axis=axis, dtype=np.float64).astype(a.value.dtype)

    def vjp(g, need):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.value.dtype),)
    return _op(out, (a,), vjp)


def mean(a, axis=None) -> Node:
    a = constant(a)
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis), 1.0 / float(n))


def mse(a, b) -> Node:
    """Mean squared error as a scalar node."""
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    d = (a.value.astype(np.float64) - b.value.astype(np.float64))
    n = max(d.size, 1)
    out = np.asarray((d * d).sum() / n)

    def vjp(g, need):
        gd = (2.0 / n) * float(g) * d
        return (gd.astype(a.value.dtype) if need[0] else None,
                (-gd).astype(b.value.dtype) if need[1] else None)
    return _op(out, (a, b), vjp)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Node:
    """Matrix product over the last two axes; ``b`` may be 2-D (shared weights)."""
    a, b = constant(a), constant(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dims differ, {a.shape} @ {b.shape}")
    if b.ndim > a.ndim:
        raise ShapeError(f"matmul: rhs has more batch dims than lhs, {a.shape} @ {b.shape}")
    av = a.value.astype(np.float64)
    bv = b.value.astype(np.float64)
    out = np.matmul(av, bv).astype(a.value.dtype)

    def vjp(g, need):
        # backward runs at storage precision; only forward values need the
        # row-independence guarantee
        ga = gb = None
        if need[0]:
            ga = np.matmul(g, np.swapaxes(b.value, -1, -2))
        if need[1]:
            if b.ndim == 2:
                gb = np.matmul(a.value.reshape(-1, a.shape[-1]).T, g.reshape(-1, g.shape[-1]))
            else:
                gb = np.matmul(np.swapaxes(a.value, -1, -2), g)
        return ga, gb
    return _op(out, (a, b), vjp)


# ---------------------------------------------------------------- structural

def reshape(a, shape) -> Node:
    a = constant(a)
    return _op(a.value.reshape(shape), (a,), lambda g, need: (g.reshape(a.shape),))


def transpose(a, axes) -> Node:
    a = constant(a)
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _op(a.value.transpose(axes), (a,), lambda g, need: (g.transpose(inv),))


def take(a, idx) -> Node:
    """Basic or integer-array indexing; repeated indices accumulate in backward."""
    a = constant(a)
    out = a.value[idx]

    def vjp(g, need):
        ga = np.zeros(a.shape, dtype=np.float64)
        np.add.at(ga, idx, g)
        return (ga.astype(a.value.dtype),)
    return _op(np.array(out), (a,), vjp)


def gather(a, idx: np.ndarray, axis: int = 1) -> Node:
    """Integer gather along ``axis``; output shape splices ``idx.shape`` in.

    Backward scatters through a one-hot matrix product, which is much faster
    than ``np.add.at`` for the small convolution windows used here.
    """
    a = constant(a)
    idx = np.asarray(idx)
    out = np.take(a.value, idx, axis=axis)
    n = a.shape[axis]

    def vjp(g, need):
        flat = idx.reshape(-1)
        onehot = np.zeros((flat.size, n))
        onehot[np.arange(flat.size), flat] = 1.0
        gm = np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(g.ndim - idx.ndim, g.ndim)))
        lead = gm.shape[: gm.ndim - idx.ndim]
        gm = gm.reshape(lead + (flat.size,)).astype(np.float64)
        ga = np.moveaxis(gm @ onehot, -1, axis)
        return (ga.astype(a.value.dtype),)
    return _op(out, (a,), vjp)


def concat(nodes: Iterable, axis: int = 0) -> Node:
    nodes = [constant(n) for n in nodes]
    out = np.concatenate([n.value for n in nodes], axis=axis)
    bounds = np.cumsum([0] + [n.shape[axis] for n in nodes])

    def vjp(g, need):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(nodes)))
    return _op(out, nodes, vjp)


def expand(a, batch: int) -> Node:
    """Repeat ``a`` along a new leading axis of size ``batch``."""
    a = constant(a)
    out = np.broadcast_to(a.value, (batch,) + a.shape).copy()
    return _op(out, (a,), lambda g, need: (g.sum(axis=0, dtype=np.float64).astype(a.value.dtype),))


def stop_gradient(a) -> Node:
    a = constant(a)
    return Node(a.value)


# ---------------------------------------------------------------- backward

def _topo(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo(loss)
    for node in order:
        if node.parents:
            node.grad = None
    root_grad = np.ones_like(loss.value)
    if loss.parents:
        loss.grad = root_grad
    else:
        loss.grad = root_grad if loss.grad is None else loss.grad + root_grad
        return
    for node in reversed(order):
        if not node.parents or node.grad is None:
            continue
        need = tuple(p.requires_grad for p in node.parents)
        grads = node.vjp(node.grad, need)
        for p, g, n in zip(node.parents, grads, need):
            if not n or g is None:
                continue
            g = np.asarray(g, dtype=p.value.dtype)
            p.grad = g if p.grad is None else p.grad + g
