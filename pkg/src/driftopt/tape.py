"""Reverse-mode automatic differentiation over dense arrays of rank <= 2.

The tape records an acyclic graph of :class:`Node` objects in creation order,
which is a valid topological order for the reverse sweep.  Every op here is
eager: it accepts a mix of :class:`Node` and plain array-likes, computes the
forward value immediately, and registers a reverse rule only when at least one
input is a node.  Calls with no node inputs fall through to plain numpy, so
model functions (drifts, costs, network layers) can be written once and run
either on or off the tape.

All values are float64.  The batch dimension is folded into the leading axis
of rank-2 arrays, so an op sees e.g. an ``(N, d)`` state block, an ``(N,)``
per-path accumulator, or a scalar loss; nothing of higher rank exists.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Node",
    "Tape",
    "ShapeError",
    "TapeError",
    "primitive",
    "detach",
    "add",
    "sub",
    "mul",
    "div",
    "matvec",
    "dot",
    "asum",
    "amean",
    "square",
    "sqrt",
    "exp",
    "log",
    "tanh",
    "relu",
    "concat",
    "scale",
    "affine",
]


class ShapeError(ValueError):
    """Raised when op inputs do not conform; names the op and the shapes."""


class TapeError(RuntimeError):
    """Raised on tape misuse (non-scalar root, repeated sweep, mixed tapes)."""


class Node:
    """One recorded value: forward array, parents, and an adjoint slot.

    The adjoint is allocated lazily (``None`` means zero).  ``_push`` is the
    reverse rule: it takes the node's accumulated adjoint and adds each
    parent's share into that parent's adjoint.
    """

    __slots__ = ("value", "op", "parents", "adjoint", "tape", "_push")

    def __init__(self, value, op, parents, tape, push):
        self.value = value
        self.op = op
        self.parents = parents
        self.adjoint = None
        self.tape = tape
        self._push = push

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"Node(op={self.op!r}, shape={self.value.shape})"


class Tape:
    """Append-only node storage plus the trainable parameter slots.

    One tape backs one loss evaluation and is discarded once the gradient has
    been read; a second backward sweep on the same tape is rejected.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: list[Node] = []
        self._swept = False

    def leaf(self, value, trainable: bool = False) -> Node:
        node = Node(np.asarray(value, dtype=np.float64), "leaf", (), self, None)
        self.nodes.append(node)
        if trainable:
            self.params.append(node)
        return node

    def backward(self, root: Node) -> np.ndarray:
        """Reverse sweep from a scalar root.

        Returns the flat gradient over the parameter slots, concatenated in
        registration order (which equals the packing order of the owning
        control field).  Adjoints stay on the nodes afterwards, so callers may
        also read e.g. state sensitivities directly.
        """
        if root.tape is not self:
            raise TapeError("root node belongs to a different tape")
        if root.value.shape != ():
            raise TapeError(
                f"backward root must be scalar, got shape {root.value.shape}"
            )
        if self._swept:
            raise TapeError("tape already swept; build a fresh tape per evaluation")
        self._swept = True
        root.adjoint = np.float64(1.0)
        for node in reversed(self.nodes):
            if node.adjoint is not None and node._push is not None:
                node._push(node.adjoint)
        grads = []
        for p in self.params:
            if p.adjoint is None:
                grads.append(np.zeros(p.value.size))
            else:
                grads.append(np.asarray(p.adjoint, dtype=np.float64).ravel())
        if not grads:
            return np.zeros(0)
        return np.concatenate(grads)

    def param_gradients(self) -> list[np.ndarray]:
        """Per-slot adjoints in registration order (after a backward sweep)."""
        out = []
        for p in self.params:
            if p.adjoint is None:
                out.append(np.zeros_like(p.value))
            else:
                out.append(np.asarray(p.adjoint, dtype=np.float64))
        return out


def _val(x) -> np.ndarray:
    if isinstance(x, Node):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _tape_of(op: str, *xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Node):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise TapeError(f"op {op!r}: inputs live on different tapes")
    return tape


def _make(tape: Tape, value: np.ndarray, op: str, parents, push) -> Node:
    node = Node(value, op, parents, tape, push)
    tape.nodes.append(node)
    return node


def _acc(node: Node, g: np.ndarray) -> None:
    if node.adjoint is None:
        node.adjoint = g
    else:
        node.adjoint = node.adjoint + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    g = np.asarray(g, dtype=np.float64)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"op {op!r}: shapes {a.shape} and {b.shape} do not conform"
        ) from None


def _elementwise_binary(op: str, fwd: Callable, bwd: Callable):
    def run(a, b):
        av, bv = _val(a), _val(b)
        _broadcast_shape(op, av, bv)
        out = fwd(av, bv)
        tape = _tape_of(op, a, b)
        if tape is None:
            return out

        def push(g):
            ga, gb = bwd(g, av, bv, out)
            if isinstance(a, Node):
                _acc(a, _unbroadcast(ga, av.shape))
            if isinstance(b, Node):
                _acc(b, _unbroadcast(gb, bv.shape))

        return _make(tape, out, op, tuple(x for x in (a, b) if isinstance(x, Node)), push)

    return run


add = _elementwise_binary("add", lambda a, b: a + b, lambda g, a, b, o: (g, g))
sub = _elementwise_binary("sub", lambda a, b: a - b, lambda g, a, b, o: (g, -g))
mul = _elementwise_binary("mul", lambda a, b: a * b, lambda g, a, b, o: (g * b, g * a))
div = _elementwise_binary(
    "div", lambda a, b: a / b, lambda g, a, b, o: (g / b, -g * a / (b * b))
)


def _elementwise_unary(op: str, fwd: Callable, bwd: Callable):
    def run(a):
        av = _val(a)
        out = fwd(av)
        if not isinstance(a, Node):
            return out

        def push(g):
            _acc(a, bwd(g, av, out))

        return _make(a.tape, out, op, (a,), push)

    return run


square = _elementwise_unary("square", lambda a: a * a, lambda g, a, o: 2.0 * a * g)
sqrt = _elementwise_unary("sqrt", np.sqrt, lambda g, a, o: g / (2.0 * o))
exp = _elementwise_unary("exp", np.exp, lambda g, a, o: g * o)
log = _elementwise_unary("log", np.log, lambda g, a, o: g / a)
tanh = _elementwise_unary("tanh", np.tanh, lambda g, a, o: g * (1.0 - o * o))
# The relu subgradient at 0 is taken to be 0 (strict inequality below).
relu = _elementwise_unary(
    "relu", lambda a: np.maximum(a, 0.0), lambda g, a, o: g * (a > 0.0)
)


def scale(a, c: float):
    """Multiply by a plain python constant (never differentiated in ``c``)."""
    c = float(c)
    av = _val(a)
    out = av * c
    if not isinstance(a, Node):
        return out

    def push(g):
        _acc(a, g * c)

    return _make(a.tape, out, "scale", (a,), push)


def asum(a, axis: int | None = None):
    """Sum over all entries (``axis=None``) or along one axis."""
    av = _val(a)
    out = av.sum(axis=axis)
    if not isinstance(a, Node):
        return out

    def push(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, av.shape))
        else:
            _acc(a, np.broadcast_to(np.expand_dims(g, axis), av.shape))

    return _make(a.tape, out, "sum", (a,), push)


def amean(a, axis: int | None = None):
    av = _val(a)
    out = av.mean(axis=axis)
    n = av.size if axis is None else av.shape[axis]
    if not isinstance(a, Node):
        return out

    def push(g):
        if axis is None:
            _acc(a, np.broadcast_to(g / n, av.shape))
        else:
            _acc(a, np.broadcast_to(np.expand_dims(g / n, axis), av.shape))

    return _make(a.tape, out, "mean", (a,), push)


def dot(a, b):
    """Inner product over the last axis, with broadcasting.

    ``(d,) . (d,) -> ()`` and ``(N,d) . (d,) -> (N,)`` and
    ``(N,d) . (N,d) -> (N,)``.
    """
    av, bv = _val(a), _val(b)
    if av.ndim == 0 or bv.ndim == 0:
        raise ShapeError(f"op 'dot': scalar operand, shapes {av.shape} and {bv.shape}")
    full = _broadcast_shape("dot", av, bv)
    out = (av * bv).sum(axis=-1)
    tape = _tape_of("dot", a, b)
    if tape is None:
        return out

    def push(g):
        gexp = np.expand_dims(g, -1) if len(full) > 1 else g
        if isinstance(a, Node):
            _acc(a, _unbroadcast(gexp * bv, av.shape))
        if isinstance(b, Node):
            _acc(b, _unbroadcast(gexp * av, bv.shape))

    return _make(tape, out, "dot", tuple(x for x in (a, b) if isinstance(x, Node)), push)


def matvec(m, x):
    """Matrix times vector, batched over rows of ``x`` when it is rank 2.

    ``m`` is ``(k, j)``; ``x`` is ``(j,) -> (k,)`` or ``(N, j) -> (N, k)``.
    """
    mv, xv = _val(m), _val(x)
    if mv.ndim != 2:
        raise ShapeError(f"op 'matvec': matrix must be rank 2, got {mv.shape}")
    if xv.ndim not in (1, 2) or xv.shape[-1] != mv.shape[1]:
        raise ShapeError(
            f"op 'matvec': shapes {mv.shape} and {xv.shape} do not conform"
        )
    batched = xv.ndim == 2
    out = xv @ mv.T if batched else mv @ xv
    tape = _tape_of("matvec", m, x)
    if tape is None:
        return out

    def push(g):
        if isinstance(m, Node):
            _acc(m, g.T @ xv if batched else np.outer(g, xv))
        if isinstance(x, Node):
            _acc(x, g @ mv if batched else mv.T @ g)

    return _make(
        tape, out, "matvec", tuple(y for y in (m, x) if isinstance(y, Node)), push
    )


def affine(a, x, b):
    """``x @ a.T + b`` for batched ``x`` (or ``a @ x + b`` for a single vector)."""
    av, xv, bv = _val(a), _val(x), _val(b)
    if av.ndim != 2 or bv.ndim != 1 or av.shape[0] != bv.shape[0]:
        raise ShapeError(
            f"op 'affine': weight {av.shape} and bias {bv.shape} do not conform"
        )
    if xv.ndim not in (1, 2) or xv.shape[-1] != av.shape[1]:
        raise ShapeError(
            f"op 'affine': weight {av.shape} and input {xv.shape} do not conform"
        )
    batched = xv.ndim == 2
    out = (xv @ av.T + bv) if batched else (av @ xv + bv)
    tape = _tape_of("affine", a, x, b)
    if tape is None:
        return out

    def push(g):
        if isinstance(a, Node):
            _acc(a, g.T @ xv if batched else np.outer(g, xv))
        if isinstance(x, Node):
            _acc(x, g @ av if batched else av.T @ g)
        if isinstance(b, Node):
            _acc(b, g.sum(axis=0) if batched else g)

    return _make(
        tape, out, "affine", tuple(y for y in (a, x, b) if isinstance(y, Node)), push
    )


def concat(a, b):
    """Concatenate along the last axis; ranks must match."""
    av, bv = _val(a), _val(b)
    if av.ndim != bv.ndim:
        raise ShapeError(
            f"op 'concat': ranks differ, shapes {av.shape} and {bv.shape}"
        )
    if av.ndim == 2 and av.shape[0] != bv.shape[0]:
        raise ShapeError(
            f"op 'concat': leading dims differ, shapes {av.shape} and {bv.shape}"
        )
    out = np.concatenate([av, bv], axis=-1)
    tape = _tape_of("concat", a, b)
    if tape is None:
        return out
    na = av.shape[-1]

    def push(g):
        if isinstance(a, Node):
            _acc(a, g[..., :na])
        if isinstance(b, Node):
            _acc(b, g[..., na:])

    return _make(
        tape, out, "concat", tuple(x for x in (a, b) if isinstance(x, Node)), push
    )


def detach(a):
    """Identical value, but the reverse rule propagates nothing.

    Detaching a plain array is the identity; detaching a detached node stays
    detached (the new node has no parents either).
    """
    if not isinstance(a, Node):
        return _val(a)
    return _make(a.tape, a.value, "detach", (), None)


_ACTIVATIONS = {"tanh": tanh, "relu": relu}

_PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matvec": matvec,
    "dot": dot,
    "sum": asum,
    "mean": amean,
    "square": square,
    "sqrt": sqrt,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "relu": relu,
    "concat": concat,
    "scale": scale,
    "affine": affine,
}


def primitive(op_tag: str, *inputs, **kwargs):
    """Dispatch an op by tag; the uniform entry point for generic callers."""
    try:
        fn = _PRIMITIVES[op_tag]
    except KeyError:
        raise ValueError(
            f"unknown op tag {op_tag!r}; known: {sorted(_PRIMITIVES)}"
        ) from None
    return fn(*inputs, **kwargs)


def activation(name: str):
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ValueError(
            f"unknown activation {name!r}; known: {sorted(_ACTIVATIONS)}"
        ) from None
