"""Parametric control fields: feed-forward nets, DenseNets, and linear ansatz.

Every architecture maps ``(x, t)`` to a d-vector.  The networks take space
and time jointly (the time value is appended to the state as one extra input
coordinate, in natural units); the time-indexed linear ansatz instead keeps
one matrix per grid step.  Parameters live in a single flat vector with a
fixed packing order so optimizers and checkpoints never touch structure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tape as ops
from .tape import Node, Tape

__all__ = [
    "FeedForwardNet",
    "DenseNet",
    "TimeIndexedLinear",
    "ControlField",
    "BoundControl",
    "ZeroControl",
    "PerturbedControl",
    "init",
    "eval_control",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class FeedForwardNet:
    """Plain multilayer perceptron; layer l computes ``act(A_l h + b_l)``.

    ``widths`` lists every layer size from input to output, so a network for
    a d-dimensional control holds ``widths[0] == d + 1`` (state plus time)
    and ``widths[-1] == d``.
    """

    widths: tuple
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ValueError(f"invalid widths {self.widths}")

    @property
    def dim(self) -> int:
        return self.widths[-1]

    def param_shapes(self) -> list:
        shapes = []
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            shapes.append((b, a))
            shapes.append((b,))
        return shapes

    def forward(self, weights, x, t):
        act = ops.activation(self.activation)
        h = _with_time(x, t, self.widths[0] - 1)
        n_layers = len(self.widths) - 1
        for l in range(n_layers):
            h = ops.affine(weights[2 * l], h, weights[2 * l + 1])
            if l < n_layers - 1:
                h = act(h)
        return h


@dataclass(frozen=True)
class DenseNet:
    """Feed-forward net with skip connections: each block's input is the
    concatenation of the original input with every previous block output,
    and the final affine layer reads the full feature stack.

    ``hidden`` lists only the hidden block widths; input and output widths
    follow from ``dim``.
    """

    dim: int
    hidden: tuple
    activation: str = "relu"

    def __post_init__(self):
        if any(w < 1 for w in self.hidden) or self.dim < 1:
            raise ValueError(f"invalid DenseNet({self.dim}, {self.hidden})")

    def param_shapes(self) -> list:
        shapes = []
        feat = self.dim + 1
        for w in self.hidden:
            shapes.append((w, feat))
            shapes.append((w,))
            feat += w
        shapes.append((self.dim, feat))
        shapes.append((self.dim,))
        return shapes

    def forward(self, weights, x, t):
        act = ops.activation(self.activation)
        feats = _with_time(x, t, self.dim)
        for l in range(len(self.hidden)):
            y = act(ops.affine(weights[2 * l], feats, weights[2 * l + 1]))
            feats = ops.concat(feats, y)
        return ops.affine(weights[-2], feats, weights[-1])


@dataclass(frozen=True)
class TimeIndexedLinear:
    """One matrix per grid step: ``u(x, t) = Xi_n x`` with ``n = floor(t/dt)``.

    Time is snapped to the nearest grid node below and clamped to the last
    step, so evaluation at ``t = T`` reuses the final matrix.
    """

    dim: int
    steps: int
    dt: float

    def __post_init__(self):
        if self.dim < 1 or self.steps < 1 or self.dt <= 0:
            raise ValueError(
                f"invalid TimeIndexedLinear({self.dim}, {self.steps}, {self.dt})"
            )

    def param_shapes(self) -> list:
        return [(self.dim, self.dim) for _ in range(self.steps)]

    def step_index(self, t: float) -> int:
        n = int(t / self.dt + 1e-9)
        return min(max(n, 0), self.steps - 1)

    def forward(self, weights, x, t):
        return ops.matvec(weights[self.step_index(t)], x)


Architecture = FeedForwardNet | DenseNet | TimeIndexedLinear


def _with_time(x, t: float, dim: int):
    """Append the time value as one extra trailing input coordinate."""
    xv = x.value if isinstance(x, Node) else np.asarray(x)
    if xv.shape[-1] != dim:
        raise ValueError(f"control expects inputs of width {dim}, got {xv.shape}")
    if xv.ndim == 2:
        col = np.full((xv.shape[0], 1), float(t))
    else:
        col = np.array([float(t)])
    return ops.concat(x, col)


def _unpack(arch: Architecture, theta: np.ndarray) -> list:
    shapes = arch.param_shapes()
    total = sum(int(np.prod(s)) for s in shapes)
    if theta.shape != (total,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({total},)")
    mats, pos = [], 0
    for s in shapes:
        size = int(np.prod(s))
        mats.append(theta[pos : pos + size].reshape(s))
        pos += size
    return mats


@dataclass
class ControlField:
    """An architecture plus its flat parameter vector.

    Instances are treated as immutable: parameter updates go through
    :meth:`with_theta`, which is what keeps the lazily cached unpacked
    matrices trustworthy.
    """

    arch: Architecture
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self._mats = None

    @property
    def n_params(self) -> int:
        return self.theta.size

    @property
    def dim(self) -> int:
        return self.arch.dim

    def matrices(self) -> list:
        if self._mats is None:
            self._mats = _unpack(self.arch, self.theta)
        return self._mats

    def with_theta(self, theta: np.ndarray) -> "ControlField":
        return ControlField(self.arch, np.asarray(theta, dtype=np.float64))

    def detached_copy(self) -> "ControlField":
        return ControlField(self.arch, self.theta.copy())

    def __call__(self, x, t: float):
        """Detached forward pass (plain numpy in, plain numpy out)."""
        xv = x.value if isinstance(x, Node) else x
        return self.arch.forward(self.matrices(), xv, t)

    def bind(self, tape: Tape) -> "BoundControl":
        """Register every weight as a trainable tape leaf, in packing order."""
        nodes = [tape.leaf(m, trainable=True) for m in self.matrices()]
        return BoundControl(self.arch, nodes, tape)


@dataclass
class BoundControl:
    """A control whose weights live on a tape; calls record the forward pass."""

    arch: Architecture
    weights: list
    tape: Tape

    @property
    def dim(self) -> int:
        return self.arch.dim

    def __call__(self, x, t: float):
        return self.arch.forward(self.weights, x, t)


@dataclass
class ZeroControl:
    """The zero vector field; the uncontrolled simulating measure."""

    dim: int

    def __call__(self, x, t: float):
        xv = x.value if isinstance(x, Node) else np.asarray(x)
        if xv.ndim == 2:
            return np.zeros((xv.shape[0], self.dim))
        return np.zeros(self.dim)


class PerturbedControl:
    """``u = base + eps * direction`` with the scalar ``eps`` trainable.

    Binding exposes exactly one parameter, so the tape gradient at
    ``eps = 0`` is the directional derivative of a loss at ``base`` in the
    given direction.  ``base`` and ``direction`` must be written against the
    tape ops so differentiable simulation can pass nodes through them.
    """

    def __init__(self, base: Callable, direction: Callable, dim: int, eps: float = 0.0):
        self.base = base
        self.direction = direction
        self.dim = dim
        self.theta = np.array([float(eps)])
        self.arch = None

    @property
    def n_params(self) -> int:
        return 1

    def with_theta(self, theta) -> "PerturbedControl":
        return PerturbedControl(self.base, self.direction, self.dim, float(theta[0]))

    def detached_copy(self) -> "PerturbedControl":
        return self.with_theta(self.theta)

    def __call__(self, x, t: float):
        xv = x.value if isinstance(x, Node) else x
        return np.asarray(self.base(xv, t)) + self.theta[0] * np.asarray(
            self.direction(xv, t)
        )

    def bind(self, tape: Tape) -> "BoundPerturbedControl":
        eps = tape.leaf(np.float64(self.theta[0]), trainable=True)
        return BoundPerturbedControl(self.base, self.direction, self.dim, eps)


@dataclass
class BoundPerturbedControl:
    base: Callable
    direction: Callable
    dim: int
    eps: Node

    def __call__(self, x, t: float):
        return ops.add(self.base(x, t), ops.mul(self.eps, self.direction(x, t)))


def eval_control(control, x, t: float, record: Tape | None = None):
    """Evaluate a control at ``(x, t)``; tape-recorded when ``record`` is set."""
    if record is not None and hasattr(control, "bind"):
        return control.bind(record)(x, t)
    return control(x, t)


def init(arch: Architecture, seed: int) -> ControlField:
    """Fresh parameters: weights uniform in +-sqrt(6 / (fan_in + fan_out)),
    biases zero; deterministic per seed."""
    rng = np.random.default_rng(seed)
    parts = []
    for s in arch.param_shapes():
        if len(s) == 1:
            parts.append(np.zeros(s))
        else:
            limit = np.sqrt(6.0 / (s[0] + s[1]))
            parts.append(rng.uniform(-limit, limit, size=s))
    theta = np.concatenate([p.ravel() for p in parts]) if parts else np.zeros(0)
    return ControlField(arch, theta)


_ARCH_KINDS = {"feedforward": FeedForwardNet, "densenet": DenseNet,
               "time_indexed_linear": TimeIndexedLinear}


def _arch_header(arch: Architecture) -> dict:
    if isinstance(arch, FeedForwardNet):
        return {"kind": "feedforward", "widths": list(arch.widths),
                "activation": arch.activation}
    if isinstance(arch, DenseNet):
        return {"kind": "densenet", "dim": arch.dim, "hidden": list(arch.hidden),
                "activation": arch.activation}
    if isinstance(arch, TimeIndexedLinear):
        return {"kind": "time_indexed_linear", "dim": arch.dim,
                "steps": arch.steps, "dt": arch.dt}
    raise TypeError(f"cannot checkpoint architecture {type(arch).__name__}")


def _arch_from_header(header: dict) -> Architecture:
    kind = header["kind"]
    if kind == "feedforward":
        return FeedForwardNet(tuple(header["widths"]), header["activation"])
    if kind == "densenet":
        return DenseNet(header["dim"], tuple(header["hidden"]), header["activation"])
    if kind == "time_indexed_linear":
        return TimeIndexedLinear(header["dim"], header["steps"], header["dt"])
    raise ValueError(f"unknown architecture kind {kind!r}")


def save_checkpoint(control: ControlField, path, extra: dict | None = None) -> None:
    """Write the flat parameter vector plus a JSON architecture header.

    Field order inside the archive: ``header`` (JSON string), ``theta``
    (flat float64), then any extra arrays (e.g. optimizer moments).
    """
    payload = {"header": json.dumps(_arch_header(control.arch)), "theta": control.theta}
    for k, v in (extra or {}).items():
        payload[k] = v
    np.savez(path, **payload)


def load_checkpoint(path) -> tuple:
    """Read a checkpoint; returns ``(control, extra_arrays)``."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        theta = np.asarray(data["theta"], dtype=np.float64)
        extra = {k: data[k] for k in data.files if k not in ("header", "theta")}
    return ControlField(_arch_from_header(header), theta), extra
