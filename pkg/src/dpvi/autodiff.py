"""Reverse-mode automatic differentiation on numpy arrays.

Every operation appends a :class:`Node` to a :class:`Tape`; ``backward`` walks
the tape once in reverse.  Operations accept plain arrays as constants and
return plain arrays when none of their inputs is a node, so the same model code
evaluates densities numerically and on a tape.

Lane mode gives per-example gradients.  A tape built with ``lanes=B`` treats
axis 0 of every node value as the example axis (size 1 for shared values, B
for per-example values).  Adjoints keep that axis at full size B, so a shared
parameter leaf of shape ``(1, P)`` ends up with a ``(B, P)`` gradient whose row
``i`` is the gradient of output lane ``i`` alone.  This is the vectorised
equivalent of running B independent single-example tapes.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "Node",
    "Tape",
    "forward",
    "backward",
    "value_and_grad",
    "exp",
    "log",
    "sqrt",
    "sigmoid",
    "dot",
    "sum",
    "logsumexp",
    "concat",
]


class DomainError(ValueError):
    """An operation was applied outside its domain (malformed model)."""


class Node:
    __slots__ = ("tape", "value", "parents", "vjps", "op", "index", "shape")

    # make ndarray <op> Node defer to the reflected Node method
    __array_ufunc__ = None

    def __init__(self, tape, value, op, parents=(), vjps=()):
        self.tape = tape
        self.value = value
        self.op = op
        self.parents = parents
        self.vjps = vjps
        self.shape = value.shape if hasattr(value, "shape") else np.shape(value)
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    def __repr__(self):
        return f"Node({self.op}, shape={self.shape})"

    def __add__(self, other):
        return _add(self, other)

    def __radd__(self, other):
        return _add(other, self)

    def __sub__(self, other):
        return _sub(self, other)

    def __rsub__(self, other):
        return _sub(other, self)

    def __mul__(self, other):
        return _mul(self, other)

    def __rmul__(self, other):
        return _mul(other, self)

    def __truediv__(self, other):
        return _div(self, other)

    def __rtruediv__(self, other):
        return _div(other, self)

    def __neg__(self):
        return Node(self.tape, -self.value, "neg", (self,), (_neg_vjp,))


class Tape:
    """Append-only record of nodes.

    ``lanes`` switches on per-example (lane) gradients, see module docstring.
    """

    def __init__(self, lanes: int | None = None):
        self.nodes: list[Node] = []
        self.inputs: list[Node] = []
        self.lanes = lanes
        self.root: Node | None = None

    def var(self, value) -> Node:
        value = np.asarray(value, dtype=np.float64)
        if self.lanes is not None and (value.ndim == 0 or value.shape[0] not in (1, self.lanes)):
            raise ValueError("lane-mode leaves need a leading axis of size 1 or lanes")
        node = Node(self, value, "input")
        self.inputs.append(node)
        return node

    def _unbroadcast(self, g, shape):
        if g.shape == shape:
            return g
        if self.lanes is not None and g.shape[1:] == shape[1:]:
            return g
        if g.ndim > len(shape):
            g = g.sum(axis=tuple(range(g.ndim - len(shape))))
        axes = tuple(
            i
            for i, (gs, s) in enumerate(zip(g.shape, shape))
            if s == 1 and gs != 1 and not (i == 0 and self.lanes is not None)
        )
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return g


def _tape_of(args):
    for a in args:
        if isinstance(a, Node):
            return a.tape
    return None


def _val(a):
    return a.value if isinstance(a, Node) else a


def _neg_vjp(g, out):
    return -g


# -- elementwise binary ------------------------------------------------------

def _add(a, b):
    tape = _tape_of((a, b))
    v = _val(a) + _val(b)
    if tape is None:
        return v
    return Node(tape, v, "add", (a, b), (lambda g, out: g, lambda g, out: g))


def _sub(a, b):
    tape = _tape_of((a, b))
    v = _val(a) - _val(b)
    if tape is None:
        return v
    return Node(tape, v, "sub", (a, b), (lambda g, out: g, lambda g, out: -g))


def _mul(a, b):
    tape = _tape_of((a, b))
    av, bv = _val(a), _val(b)
    v = av * bv
    if tape is None:
        return v
    return Node(tape, v, "mul", (a, b), (lambda g, out: g * bv, lambda g, out: g * av))


def _div(a, b):
    av, bv = _val(a), _val(b)
    if np.asarray(bv == 0).any():
        raise DomainError("division by zero")
    tape = _tape_of((a, b))
    v = av / bv
    if tape is None:
        return v
    return Node(
        tape, v, "div", (a, b),
        (lambda g, out: g / bv, lambda g, out: -g * out.value / bv),
    )


# -- elementwise unary -------------------------------------------------------

def exp(x):
    xv = _val(x)
    with np.errstate(over="ignore"):
        v = np.exp(xv)
    if not np.isfinite(v).all():
        raise DomainError("exp overflow")
    if not isinstance(x, Node):
        return v
    return Node(x.tape, v, "exp", (x,), (lambda g, out: g * out.value,))


def log(x):
    xv = _val(x)
    if np.asarray(xv <= 0).any():
        raise DomainError("log of non-positive value")
    v = np.log(xv)
    if not isinstance(x, Node):
        return v
    return Node(x.tape, v, "log", (x,), (lambda g, out: g / xv,))


def sqrt(x):
    xv = _val(x)
    if np.any(np.asarray(xv) < 0):
        raise DomainError("sqrt of negative value")
    v = np.sqrt(xv)
    if not isinstance(x, Node):
        return v
    if np.any(v == 0):
        raise DomainError("sqrt is not differentiable at 0")
    return Node(x.tape, v, "sqrt", (x,), (lambda g, out: 0.5 * g / out.value,))


def _sigmoid(z):
    # exp(-|z|) never overflows
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x):
    v = _sigmoid(np.asarray(_val(x), dtype=np.float64))
    if not isinstance(x, Node):
        return v
    return Node(x.tape, v, "sigmoid", (x,), (lambda g, out: g * out.value * (1.0 - out.value),))


# -- reductions --------------------------------------------------------------

def sum(x, axis=-1):
    """Sum over ``axis`` (an int or a tuple of ints)."""
    v = np.add.reduce(_val(x), axis=axis)
    if not isinstance(x, Node):
        return v
    nd = len(x.shape)
    axes = sorted(a % nd for a in (axis if isinstance(axis, tuple) else (axis,)))
    xshape = x.shape

    def vjp(g, out):
        g = np.asarray(g)
        keep = list(g.shape)
        full = list(g.shape)
        for a in axes:
            keep.insert(a, 1)
            full.insert(a, xshape[a])
        return np.broadcast_to(g.reshape(keep), tuple(full))

    return Node(x.tape, v, "sum", (x,), (vjp,))


def dot(a, b):
    """Contraction over the last axis, broadcasting over the rest."""
    av, bv = _val(a), _val(b)
    v = np.sum(av * bv, axis=-1)
    tape = _tape_of((a, b))
    if tape is None:
        return v
    return Node(
        tape, v, "dot", (a, b),
        (lambda g, out: g[..., None] * bv, lambda g, out: g[..., None] * av),
    )


def _insert_axis(a, pos):
    a = np.asarray(a)
    return a.reshape(a.shape[:pos] + (1,) + a.shape[pos:])


def _lse(v, axis):
    m = np.maximum.reduce(v, axis=axis, keepdims=True)
    if not np.isfinite(m).all():
        m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.add.reduce(np.exp(v - m), axis=axis)) + m.squeeze(axis)


def logsumexp(x, axis=-1, keepdims=False):
    """Overflow-safe log-sum-exp.

    ``x`` is either a node/array reduced over ``axis`` or a list of
    equally-broadcastable terms combined elementwise.
    """
    if isinstance(x, (list, tuple)):
        terms = list(x)
        vals = np.broadcast_arrays(*[np.asarray(_val(t), dtype=np.float64) for t in terms])
        stacked = np.stack(vals, axis=0)
        v = _lse(stacked, 0)
        tape = _tape_of(terms)
        if tape is None:
            return v
        w = np.exp(stacked - v)
        parents = tuple(t for t in terms if isinstance(t, Node))
        weights = [w[i] for i, t in enumerate(terms) if isinstance(t, Node)]
        vjps = tuple((lambda wi: (lambda g, out: g * wi))(wi) for wi in weights)
        return Node(tape, v, "logsumexp", parents, vjps)
    xv = np.asarray(_val(x), dtype=np.float64)
    v = _lse(xv, axis)
    if keepdims:
        v = np.expand_dims(v, axis)
    if not isinstance(x, Node):
        return v

    pos = axis % xv.ndim

    def vjp(g, out):
        if keepdims:
            return g * np.exp(xv - out.value)
        ov = out.value
        return _insert_axis(g, pos) * np.exp(xv - _insert_axis(ov, pos))

    return Node(x.tape, v, "logsumexp", (x,), (vjp,))


def concat(xs: Sequence, axis=-1):
    vals = [np.asarray(_val(t), dtype=np.float64) for t in xs]
    v = np.concatenate(vals, axis=axis)
    tape = _tape_of(xs)
    if tape is None:
        return v
    bounds = np.cumsum([0] + [t.shape[axis] for t in vals])
    ax = axis % v.ndim
    parents, vjps = [], []
    for i, t in enumerate(xs):
        if isinstance(t, Node):
            lo, hi = int(bounds[i]), int(bounds[i + 1])
            parents.append(t)
            vjps.append(
                (lambda lo, hi: (lambda g, out: np.take(
                    np.broadcast_to(g, g.shape[:ax] + out.shape[ax:ax + 1] + g.shape[ax + 1:]),
                    np.arange(lo, hi), axis=ax)))(lo, hi)
            )
    return Node(tape, v, "concat", tuple(parents), tuple(vjps))


# -- driver ------------------------------------------------------------------

def forward(f: Callable, *xs, lanes: int | None = None):
    """Evaluate ``f`` on fresh leaves; returns ``(value, tape)``."""
    tape = Tape(lanes)
    leaves = [tape.var(x) for x in xs]
    out = f(*leaves)
    if not isinstance(out, Node):
        out = Node(tape, np.asarray(out, dtype=np.float64), "const")
    tape.root = out
    return out.value, tape


def backward(tape: Tape, root: Node | None = None) -> list[np.ndarray]:
    """Gradient of the (per-lane) scalar root with respect to each leaf."""
    root = root if root is not None else tape.root
    if root is None:
        raise ValueError("tape has no root")
    rshape = root.shape
    if tape.lanes is None:
        if int(np.prod(rshape)) != 1:
            raise ValueError(f"backward needs a scalar root, got shape {rshape}")
    elif rshape not in ((tape.lanes,), (1,)):
        raise ValueError(f"lane-mode root must have shape ({tape.lanes},), got {rshape}")

    n = root.index + 1
    adj: list = [None] * n
    adj[root.index] = np.ones(rshape if tape.lanes is None else (tape.lanes,))
    nodes = tape.nodes
    for i in range(n - 1, -1, -1):
        g = adj[i]
        if g is None:
            continue
        node = nodes[i]
        for parent, vjp in zip(node.parents, node.vjps):
            if parent.__class__ is not Node:
                continue
            pg = tape._unbroadcast(vjp(g, node), parent.shape)
            j = parent.index
            adj[j] = pg if adj[j] is None else adj[j] + pg

    grads = []
    for leaf in tape.inputs:
        g = adj[leaf.index] if leaf.index < n else None
        if tape.lanes is None:
            shape = leaf.shape
        else:
            shape = (tape.lanes,) + leaf.shape[1:]
        if g is None:
            g = np.zeros(shape)
        elif g.shape != shape:
            g = np.broadcast_to(g, shape).copy()
        grads.append(g)
    return grads


def value_and_grad(f: Callable, *xs, lanes: int | None = None):
    value, tape = forward(f, *xs, lanes=lanes)
    grads = backward(tape)
    return value, grads if len(grads) != 1 else grads[0]
