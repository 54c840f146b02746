"""Minimal reverse-mode differentiation over numpy arrays.

A :class:`Node` holds a value and, for non-leaf nodes, the parents it was
computed from together with the rule that maps the output gradient onto each
parent.  Broadcasting is deliberately narrow: equal shapes, a Python scalar,
or a ``(B, C, 1, 1)`` operand against a ``(B, C, H, W)`` one.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from . import kernels

GradRule = Callable[[np.ndarray], np.ndarray]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""

    def __init__(self, op: str, a_shape, b_shape=None):
        self.op = op
        self.shapes = (tuple(a_shape),) if b_shape is None else (tuple(a_shape), tuple(b_shape))
        detail = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {detail}")


class Node:
    """A value in the computation graph.

    ``parents`` is a tuple of ``(node, rule)`` pairs.  A ``blocked`` node keeps
    its parents for inspection but backward never propagates through it.  A
    blocked leaf is a constant.
    """

    __slots__ = ("value", "parents", "blocked", "requires_grad", "grad", "name", "__weakref__")

    def __init__(
        self,
        value,
        parents: Sequence[Tuple["Node", GradRule]] = (),
        blocked: bool = False,
        name: Optional[str] = None,
    ):
        self.value = np.asarray(value)
        if self.value.dtype.kind != "f":
            self.value = self.value.astype(np.float64)
        self.parents = tuple(parents)
        self.blocked = blocked
        # constants and anything computed only from them need no gradient
        self.requires_grad = not blocked and (not self.parents or any(p.requires_grad for p, _ in self.parents))
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        flag = " blocked" if self.blocked else ""
        return f"<Node{tag} shape={self.shape}{flag}>"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)


Operand = Union[Node, float, int]


def constant(value) -> Node:
    """Leaf node that is never differentiated."""
    return Node(value, blocked=True)


def is_valid(x) -> bool:
    """True when every entry is finite."""
    v = x.value if isinstance(x, Node) else np.asarray(x)
    return bool(np.all(np.isfinite(v)))


def _as_node(x: Operand) -> Node:
    return x if isinstance(x, Node) else constant(np.asarray(x, dtype=np.float64))


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    return g.sum(axis=(2, 3), keepdims=True)


def _broadcast_shape(op: str, a, b):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    if b.size == 1 and b.ndim == 0:
        return sa
    if a.size == 1 and a.ndim == 0:
        return sb
    if len(sa) == 4 and sb == (sa[0], sa[1], 1, 1):
        return sa
    if len(sb) == 4 and sa == (sb[0], sb[1], 1, 1):
        return sb
    raise ShapeError(op, sa, sb)


def _binary(op: str, a: Operand, b: Operand, fwd, da, db) -> Node:
    # python scalars adopt the other operand's dtype
    if not isinstance(a, Node):
        a = constant(np.asarray(a, dtype=_as_node(b).value.dtype))
    if not isinstance(b, Node):
        b = constant(np.asarray(b, dtype=a.value.dtype))
    _broadcast_shape(op, a.value, b.value)
    out = fwd(a.value, b.value)
    sa, sb = a.shape, b.shape
    parents = (
        (a, lambda g: _reduce_to(da(g, a.value, b.value), sa)),
        (b, lambda g: _reduce_to(db(g, a.value, b.value), sb)),
    )
    return Node(out, parents)


def add(a: Operand, b: Operand) -> Node:
    return _binary("add", a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a: Operand, b: Operand) -> Node:
    return _binary("sub", a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a: Operand, b: Operand) -> Node:
    return _binary("mul", a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a: Operand, b: Operand) -> Node:
    bv = _as_node(b).value
    if np.any(bv == 0):
        raise ZeroDivisionError("div: denominator has zero entries")
    return _binary(
        "div", a, b, np.divide, lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y)
    )


def elementwise(kind: str, a: Operand, b: Operand) -> Node:
    """Dispatch ``add``/``sub``/``mul``/``div`` by name."""
    try:
        fn = {"add": add, "sub": sub, "mul": mul, "div": div}[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    return fn(a, b)


def sqrt(a: Node) -> Node:
    out = np.sqrt(a.value)
    return Node(out, ((a, lambda g: g / (2.0 * out)),))


def reshape(a: Node, shape) -> Node:
    old = a.shape
    return Node(a.value.reshape(shape), ((a, lambda g: g.reshape(old)),))


def total(a: Node) -> Node:
    """Sum of all entries, as a 0-d node."""
    shape = a.shape
    return Node(a.value.sum(), ((a, lambda g: np.broadcast_to(g, shape).copy()),))


def reduce_spatial_moments(x: Node) -> Tuple[Node, Node]:
    """Per-(b, c) mean and population variance (divisor H*W)."""
    if x.value.ndim != 4:
        raise ShapeError("reduce_spatial_moments", x.shape)
    B, C, H, W = x.shape
    if H * W == 0:
        raise ValueError("reduce_spatial_moments: empty spatial extent")
    mean, var = kernels.spatial_moments(x.value)
    mean = mean.astype(x.value.dtype, copy=False)
    var = var.astype(x.value.dtype, copy=False)
    n = float(H * W)
    centred = x.value - mean[:, :, None, None]
    mean_node = Node(mean, ((x, lambda g: np.broadcast_to(g[:, :, None, None] / n, x.shape).copy()),))
    var_node = Node(var, ((x, lambda g: g[:, :, None, None] * (2.0 / n) * centred),))
    return mean_node, var_node


def stop_gradient(n: Node) -> Node:
    """Same value as ``n``; backward treats the result as a constant."""
    return Node(n.value, ((n, lambda g: np.zeros_like(n.value)),), blocked=True)


def _topo_order(root: Node) -> list:
    order, seen = [], set()
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
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Node, leaves: Optional[Iterable[Node]] = None) -> Dict[Node, np.ndarray]:
    """Gradient of a scalar ``loss`` with respect to every leaf in its graph.

    Leaves that only feed ``loss`` through blocked nodes, and constants,
    receive exact zeros.
    The returned arrays are also stored on ``leaf.grad``.
    """
    if loss.value.size != 1:
        raise ShapeError("backward (loss must be scalar)", loss.shape)
    order = _topo_order(loss)
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.blocked:
            continue
        for parent, rule in node.parents:
            if not parent.requires_grad:
                continue
            contrib = rule(g)
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else prev + contrib
    targets = [n for n in order if n.is_leaf] if leaves is None else list(leaves)
    result = {}
    for leaf in targets:
        g = grads.get(id(leaf))
        if g is None:
            g = np.zeros_like(leaf.value)
        leaf.grad = g
        result[leaf] = g
    return result
