"""Monte Carlo loss estimators over path batches, with tape gradients.

Five estimators drive the training loop.  The relative-entropy loss is the
only one that simulates under the control being optimized and differentiates
through the dynamics; the other four draw paths under a forward control ``v``
whose branch is detached, so their gradients flow only through the explicit
``u`` terms.  The exact-gradient helper provides an independent Monte Carlo
route to the same derivatives for cross-checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import approx, sde
from . import tape as ops
from .sde import SdeModel, TimeGrid
from .tape import Tape

__all__ = [
    "LossSpec",
    "LossValue",
    "LossOverflowError",
    "LOSS_KINDS",
    "FORWARD_POLICIES",
    "re_loss",
    "ce_loss",
    "var_loss",
    "logvar_loss",
    "moment_loss",
    "evaluate",
    "exact_re_gradient",
    "DirectionalDerivatives",
]

LOSS_KINDS = ("relative_entropy", "cross_entropy", "variance", "log_variance", "moment")

FORWARD_POLICIES = ("zero", "current_u", "frozen")

# exp() overflows float64 near 709; the variance loss squares the weight, so
# its budget is half that.
_EXP_LIMIT = 700.0
_VAR_EXP_LIMIT = 350.0


class LossOverflowError(RuntimeError):
    """Exponential reweighting factor overflowed; carries the max exponent."""

    def __init__(self, kind: str, max_exponent: float):
        super().__init__(
            f"{kind}: exponential weight overflow, max exponent {max_exponent:.2f}"
        )
        self.max_exponent = float(max_exponent)


@dataclass
class LossSpec:
    """Which estimator to run and how its forward control is chosen.

    ``y0`` is the extra trainable scalar of the moment loss; the other kinds
    carry none.  With policy ``frozen``, ``frozen_control`` supplies the
    fixed forward control for ablations.
    """

    kind: str
    forward_policy: str = "current_u"
    y0: float | None = None
    frozen_control: object | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; known: {LOSS_KINDS}")
        if self.forward_policy not in FORWARD_POLICIES:
            raise ValueError(
                f"unknown forward policy {self.forward_policy!r}; "
                f"known: {FORWARD_POLICIES}"
            )
        if self.kind == "moment" and self.y0 is None:
            self.y0 = 0.0
        if self.kind != "moment" and self.y0 is not None:
            raise ValueError(f"y0 is only meaningful for the moment loss")
        if self.forward_policy == "frozen" and self.frozen_control is None:
            raise ValueError("policy 'frozen' requires frozen_control")


@dataclass
class LossValue:
    """Scalar estimate plus the flat parameter gradient.

    For the moment loss the gradient has one extra trailing entry, the
    derivative with respect to ``y0``.
    """

    value: float
    gradient: np.ndarray
    n_paths: int
    seed: int

    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.gradient))


def _finite_or_raise(value: float, kind: str) -> float:
    if not math.isfinite(value):
        raise FloatingPointError(f"{kind}: non-finite loss value {value}")
    return float(value)


def re_loss(
    model: SdeModel, control, grid: TimeGrid, n_paths: int, seed: int
) -> LossValue:
    """Relative-entropy estimator: paths under ``u`` itself, fully pathwise.

    ``(1/N) sum_i [ 1/2 sum |u|^2 dt + sum f dt + g(X_T) ]`` where states,
    costs, and the control quadratic all carry gradients through the
    simulated dynamics.
    """
    tape = Tape()
    bound = control.bind(tape)
    batch = sde.simulate(model, bound, grid, n_paths, seed, record=tape)
    dt = grid.dt
    quad = None
    for u_n in batch.control_nodes:
        q = ops.scale(ops.dot(u_n, u_n), 0.5 * dt)
        quad = q if quad is None else ops.add(quad, q)
    total = ops.add(quad, sde.work(batch, model))
    loss = ops.amean(total)
    grad = tape.backward(loss)
    return LossValue(_finite_or_raise(float(loss.value), "re_loss"),
                     grad, n_paths, seed)


def ce_loss(
    model: SdeModel, control, v, grid: TimeGrid, n_paths: int, seed: int
) -> LossValue:
    """Cross-entropy estimator over paths drawn under ``v``.

    mean of ``(1/2 sum|u|^2 dt - sum(u.v) dt - sum u.xi sqrt(dt)) * exp(e)``
    with ``e = -sum v.xi sqrt(dt) - 1/2 sum|v|^2 dt - W``; the ``v`` branch
    and the exponential factor are detached.
    """
    batch = sde.simulate(model, v, grid, n_paths, seed)
    w = np.asarray(sde.work(batch, model))
    exponent = sde.girsanov_log_rn(batch) - w
    if exponent.max() > _EXP_LIMIT:
        raise LossOverflowError("ce_loss", exponent.max())
    weight = np.exp(exponent)

    tape = Tape()
    bound = control.bind(tape)
    dt = grid.dt
    sq = math.sqrt(dt)
    pref = None
    for n in range(grid.steps):
        x_n = batch.states[:, n, :]
        u_n = bound(x_n, n * dt)
        term = ops.sub(
            ops.scale(ops.dot(u_n, u_n), 0.5 * dt),
            ops.add(
                ops.scale(ops.dot(u_n, batch.control_values[:, n, :]), dt),
                ops.scale(ops.dot(u_n, batch.noise[:, n, :]), sq),
            ),
        )
        pref = term if pref is None else ops.add(pref, term)
    loss = ops.amean(ops.mul(pref, weight))
    grad = tape.backward(loss)
    return LossValue(_finite_or_raise(float(loss.value), "ce_loss"),
                     grad, n_paths, seed)


def _ytilde_minus_g(model, batch, bound):
    y = sde.ytilde(batch, model, bound)
    g = np.asarray(model.terminal_cost(batch.states[:, -1, :]))
    return ops.sub(y, g)


def var_loss(
    model: SdeModel, control, v, grid: TimeGrid, n_paths: int, seed: int
) -> LossValue:
    """Variance estimator: unbiased sample variance of ``exp(Y~ - g)``.

    Exponents are used raw; shifting by the batch max would rescale the
    estimator, so overflow aborts instead.
    """
    if n_paths < 2:
        raise ValueError("var_loss needs at least 2 paths")
    batch = sde.simulate(model, v, grid, n_paths, seed)
    tape = Tape()
    bound = control.bind(tape)
    centered = _ytilde_minus_g(model, batch, bound)
    peak = float(np.max(getattr(centered, "value", centered)))
    if peak > _VAR_EXP_LIMIT:
        raise LossOverflowError("var_loss", peak)
    z = ops.exp(centered)
    dev = ops.sub(z, ops.amean(z))
    loss = ops.scale(ops.asum(ops.square(dev)), 1.0 / (n_paths - 1))
    grad = tape.backward(loss)
    return LossValue(_finite_or_raise(float(loss.value), "var_loss"),
                     grad, n_paths, seed)


def logvar_loss(
    model: SdeModel, control, v, grid: TimeGrid, n_paths: int, seed: int
) -> LossValue:
    """Log-variance estimator: unbiased sample variance of ``Y~ - g``.

    ``u`` enters only through ``Y~``; neither running nor terminal costs are
    differentiated, and the value is invariant under constant shifts of
    ``Y~ - g``.
    """
    if n_paths < 2:
        raise ValueError("logvar_loss needs at least 2 paths")
    batch = sde.simulate(model, v, grid, n_paths, seed)
    tape = Tape()
    bound = control.bind(tape)
    centered = _ytilde_minus_g(model, batch, bound)
    dev = ops.sub(centered, ops.amean(centered))
    loss = ops.scale(ops.asum(ops.square(dev)), 1.0 / (n_paths - 1))
    grad = tape.backward(loss)
    return LossValue(_finite_or_raise(float(loss.value), "logvar_loss"),
                     grad, n_paths, seed)


def moment_loss(
    model: SdeModel,
    control,
    y0: float,
    v,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
) -> LossValue:
    """Moment estimator ``(1/N) sum (Y~ + y0 - g)^2`` with trainable ``y0``.

    The returned gradient carries the ``y0`` derivative as its last entry.
    """
    batch = sde.simulate(model, v, grid, n_paths, seed)
    tape = Tape()
    bound = control.bind(tape)
    y0_node = tape.leaf(np.float64(y0), trainable=True)
    shifted = ops.add(_ytilde_minus_g(model, batch, bound), y0_node)
    loss = ops.amean(ops.square(shifted))
    grad = tape.backward(loss)
    return LossValue(_finite_or_raise(float(loss.value), "moment_loss"),
                     grad, n_paths, seed)


def resolve_forward_control(spec: LossSpec, control):
    """The simulating control implied by the spec's forward policy."""
    if spec.forward_policy == "zero":
        return approx.ZeroControl(control.dim)
    if spec.forward_policy == "frozen":
        return spec.frozen_control
    return control.detached_copy()


def evaluate(
    spec: LossSpec,
    model: SdeModel,
    control,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
) -> LossValue:
    """Run the estimator named by the spec with its forward-control policy."""
    if spec.kind == "relative_entropy":
        return re_loss(model, control, grid, n_paths, seed)
    v = resolve_forward_control(spec, control)
    if spec.kind == "cross_entropy":
        return ce_loss(model, control, v, grid, n_paths, seed)
    if spec.kind == "variance":
        return var_loss(model, control, v, grid, n_paths, seed)
    if spec.kind == "log_variance":
        return logvar_loss(model, control, v, grid, n_paths, seed)
    return moment_loss(model, control, spec.y0, v, grid, n_paths, seed)


@dataclass
class DirectionalDerivatives:
    """Monte Carlo directional-derivative estimates with standard errors."""

    estimates: np.ndarray
    std_errors: np.ndarray
    n_paths: int


def exact_re_gradient(
    model: SdeModel,
    control,
    directions: Sequence[Callable],
    grid: TimeGrid,
    n_paths: int,
    seed: int,
) -> DirectionalDerivatives:
    """Closed-form directional derivatives of the relative-entropy loss.

    Estimates ``E[(g(X_T) - Y~^{u,u}) * sum phi(X_n, t_n).xi_n sqrt(dt)]``
    for each direction ``phi``, over paths simulated under ``u``.  Serves as
    an independent oracle for the tape gradients of ``re_loss`` and of half
    the ``v = u`` log-variance gradient.
    """
    batch = sde.simulate(model, control, grid, n_paths, seed)
    y = np.asarray(sde.ytilde(batch, model, control))
    g = np.asarray(model.terminal_cost(batch.states[:, -1, :]))
    c = g - y
    dt = grid.dt
    sq = math.sqrt(dt)
    est = np.empty(len(directions))
    se = np.empty(len(directions))
    for j, phi in enumerate(directions):
        s = np.zeros(batch.n_paths)
        for n in range(grid.steps):
            p = np.asarray(phi(batch.states[:, n, :], n * dt))
            s += (p * batch.noise[:, n, :]).sum(axis=-1) * sq
        prod = c * s
        est[j] = prod.mean()
        se[j] = prod.std(ddof=1) / math.sqrt(n_paths)
    return DirectionalDerivatives(est, se, n_paths)
