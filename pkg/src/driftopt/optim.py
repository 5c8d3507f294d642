"""First-order optimizers and the iterative training loop.

The loop couples a loss estimator to a parametrized control: each iteration
simulates a fresh batch (deterministic per-iteration seed), computes the tape
gradient, and applies an SGD or Adam update.  Metrics are evaluated on a
cadence with seeds independent of the training stream.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses, metrics, sde
from .losses import LossSpec
from .sde import SdeModel, TimeGrid

__all__ = [
    "OptimizerState",
    "NonFiniteGradientError",
    "step",
    "TrainConfig",
    "TrainRecord",
    "TrainResult",
    "train",
]

logger = logging.getLogger(__name__)

OPTIMIZER_KINDS = ("sgd", "adam")

# Distinct tag mixed into metric seeds so metric batches never reuse
# training noise.
_METRIC_STREAM = 0x51CA


class NonFiniteGradientError(ValueError):
    """Gradient passed to an optimizer step contained nan or inf."""


@dataclass
class OptimizerState:
    """Adam or SGD state over a flat parameter vector.

    Adam keeps bias-corrected first and second moments; SGD keeps nothing
    but the step count.
    """

    kind: str
    eta: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    steps: int = 0

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(
                f"unknown optimizer {self.kind!r}; known: {OPTIMIZER_KINDS}"
            )
        if self.eta <= 0.0:
            raise ValueError(f"learning rate must be positive, got {self.eta}")


def step(state: OptimizerState, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One optimizer update; returns the new parameter vector.

    Adam uses bias correction, so the very first step moves each coordinate
    by nearly ``eta * sign(g)`` regardless of gradient scale.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if theta.shape != grad.shape:
        raise ValueError(
            f"parameter/gradient shape mismatch: {theta.shape} vs {grad.shape}"
        )
    if not np.isfinite(grad).all():
        raise NonFiniteGradientError(
            f"non-finite gradient at step {state.steps + 1}"
        )
    state.steps += 1
    if state.kind == "sgd":
        return theta - state.eta * grad
    if state.m is None:
        state.m = np.zeros_like(theta)
        state.v = np.zeros_like(theta)
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.steps)
    v_hat = state.v / (1.0 - state.beta2 ** state.steps)
    return theta - state.eta * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class TrainConfig:
    """Everything the training loop needs besides the model and control."""

    loss: LossSpec
    grid: TimeGrid
    n_paths: int
    iterations: int
    seed: int
    optimizer: str = "adam"
    eta: float = 0.01
    metric_every: int = 10
    metric_paths: int = 2000
    reference_control: Callable | None = None

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")
        if self.metric_every < 1:
            raise ValueError("metric_every must be positive")


@dataclass
class TrainRecord:
    """One logged iteration; metric fields are nan off the cadence."""

    iteration: int
    loss: float
    grad_norm: float
    isre: float
    l2_error: float
    wall_ms: float


@dataclass
class TrainResult:
    """Final control plus everything needed to resume the run."""

    control: object
    records: list[TrainRecord]
    state: OptimizerState
    next_iteration: int


def _metric_row(model, control, cfg: TrainConfig, iteration: int):
    seed = sde.mix_seed(cfg.seed, iteration, _METRIC_STREAM)
    frozen = control.detached_copy()
    try:
        rep = metrics.isre(model, frozen, cfg.grid, cfg.metric_paths, seed)
        isre_val = rep.value
    except metrics.MetricError:
        isre_val = float("inf")
    if cfg.reference_control is None:
        l2 = float("nan")
    else:
        l2 = metrics.l2_error(
            model, frozen, cfg.reference_control, cfg.grid, cfg.metric_paths,
            sde.mix_seed(seed, 1),
        )
    return isre_val, l2


def train(
    model: SdeModel,
    control,
    cfg: TrainConfig,
    state: OptimizerState | None = None,
    start_iteration: int = 0,
    callback: Callable | None = None,
) -> TrainResult:
    """Run the loss-driven optimization loop.

    Runs iterations ``start_iteration .. cfg.iterations - 1`` so a resumed
    run (restored optimizer state, same config) reproduces an uninterrupted
    one bit for bit apart from wall times.  A non-finite gradient skips the
    update for that iteration and is logged rather than raised.  With the
    moment loss the trailing gradient entry updates ``cfg.loss.y0``
    alongside the control weights.  ``callback(iteration, control)``, when
    given, runs before each update and may record diagnostics; it must not
    mutate the control.
    """
    theta = control.theta.copy()
    is_moment = cfg.loss.kind == "moment"
    if is_moment:
        theta = np.concatenate([theta, [cfg.loss.y0]])
    if state is None:
        state = OptimizerState(kind=cfg.optimizer, eta=cfg.eta)
    records: list[TrainRecord] = []

    for j in range(start_iteration, cfg.iterations):
        t0 = time.perf_counter()
        if callback is not None:
            callback(j, control)
        seed_j = sde.mix_seed(cfg.seed, j)
        value = losses.evaluate(
            cfg.loss, model, control, cfg.grid, cfg.n_paths, seed_j
        )
        gnorm = value.grad_norm()
        skipped = False
        if np.isfinite(value.gradient).all():
            theta = step(state, theta, value.gradient)
            if is_moment:
                cfg.loss.y0 = float(theta[-1])
                control = control.with_theta(theta[:-1])
            else:
                control = control.with_theta(theta)
        else:
            skipped = True
            logger.warning(
                "iteration %d: non-finite gradient (norm %s), update skipped",
                j, gnorm,
            )
        last = j == cfg.iterations - 1
        if j % cfg.metric_every == 0 or last:
            isre_val, l2 = _metric_row(model, control, cfg, j)
        else:
            isre_val, l2 = float("nan"), float("nan")
        wall = (time.perf_counter() - t0) * 1e3
        records.append(TrainRecord(
            iteration=j,
            loss=value.value,
            grad_norm=float("nan") if skipped else gnorm,
            isre=isre_val,
            l2_error=l2,
            wall_ms=wall,
        ))
    return TrainResult(
        control=control,
        records=records,
        state=state,
        next_iteration=cfg.iterations,
    )
