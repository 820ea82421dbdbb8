"""Tensors and the reverse-mode tape.

Every primitive returns a :class:`Tensor` carrying a :class:`Node` that
remembers its inputs and a closure mapping the output gradient to input
gradients. :class:`Graph` recovers the executed operations in topological
order from any output, and :func:`backward` walks it in reverse.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    saved: dict = field(default_factory=dict)


class Tensor:
    """Dense float64 array that can take part in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64, copy=True) if not isinstance(data, np.ndarray) \
            else np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        op = self.node.op if self.node is not None else "leaf"
        return f"Tensor(shape={self.shape}, op={op}, requires_grad={self.requires_grad})"

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self, params=None):
        backward(self, params=params)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_output(data, op, inputs, backward_fn, **saved) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.node = Node(op, tuple(inputs), backward_fn, saved)
    return out


class Graph:
    """Executed primitives reachable from an output, inputs before consumers."""

    def __init__(self, entries):
        self.entries = entries  # list of (output tensor, node)

    @classmethod
    def trace(cls, output: Tensor) -> "Graph":
        order, seen = [], set()
        stack = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if t.node is None:
                continue
            if expanded:
                order.append((t, t.node))
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for inp in t.node.inputs:
                if inp.node is not None and id(inp) not in seen:
                    stack.append((inp, False))
        return cls(order)

    @property
    def nodes(self):
        return [n for _, n in self.entries]

    def ops(self):
        return [n.op for _, n in self.entries]

    def count(self, op: str) -> int:
        return sum(1 for _, n in self.entries if n.op == op)

    def leaves(self):
        out, seen = [], set()
        for _, node in self.entries:
            for t in node.inputs:
                if t.node is None and t.requires_grad and id(t) not in seen:
                    seen.add(id(t))
                    out.append(t)
        return out

    def __len__(self):
        return len(self.entries)


def backward(loss: Tensor, graph: Optional[Graph] = None, params: Optional[Iterable[Tensor]] = None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf.

    ``params`` listed but unreachable from ``loss`` receive a zero gradient.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if graph is None:
        graph = Graph.trace(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    if loss.node is None and loss.requires_grad:
        _accumulate(loss, grads[id(loss)])
    for out, node in reversed(graph.entries):
        g = grads.pop(id(out), None)
        if g is None or not out.requires_grad:
            continue
        in_grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t.node is None:
                _accumulate(t, gi)
            else:
                prev = grads.get(id(t))
                grads[id(t)] = gi if prev is None else prev + gi
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


def _accumulate(t: Tensor, g: np.ndarray):
    g = np.asarray(g, dtype=np.float64).reshape(t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_output(a.data + b.data, "add", (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return make_output(a.data * c, "scale", (a,), lambda g: (g * c,))
    ad, bd = a.data, b.data
    return make_output(ad * bd, "mul", (a, b),
                       lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def power(a: Tensor, exponent: float) -> Tensor:
    p = float(exponent)
    ad = a.data
    return make_output(ad ** p, "pow", (a,), lambda g: (g * p * ad ** (p - 1.0),))


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return make_output(np.array(a.data.sum()), "sum", (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return make_output(np.array(a.data.mean()), "mean", (a,),
                       lambda g: (np.full(shape, np.asarray(g).item() / n),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make_output(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(old),))


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return make_output(np.abs(a.data), "abs", (a,), lambda g: (g * sign,))
