"""Control problems and Euler-Maruyama simulation of controlled diffusions.

A problem bundles drift, diffusion, running and terminal costs, horizon, and
the initial condition.  Simulation produces a :class:`PathBatch`: the state
array, the standard normal increments that drove it, and (when requested) the
tape nodes for the states so that losses can differentiate through the
dynamics.

Conventions used throughout:

* every time integral, deterministic or stochastic, is a left-point (Ito)
  sum with integrands evaluated at ``(X_n, t_n)`` before the step;
* noise for path ``i`` is a pure function of ``(seed, i)`` via per-block
  counter-based generators, so batches are bitwise reproducible regardless of
  how a large run is chunked or scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tape as ops
from .tape import Node, Tape

__all__ = [
    "SdeModel",
    "TimeGrid",
    "PathBatch",
    "PathFunctionals",
    "SimulationError",
    "simulate",
    "work",
    "girsanov_log_rn",
    "ytilde",
    "compute_functionals",
    "mix_seed",
]

# Paths are organised in fixed-size blocks; each block draws its noise from
# its own counter-based generator keyed by (seed, block index).  Partial
# blocks always draw the full block and slice, so path i's noise depends only
# on (seed, i, K, d).
_BLOCK = 256
_MASK64 = (1 << 64) - 1


class SimulationError(RuntimeError):
    """Non-finite state or control output during simulation."""


def mix_seed(*parts: int) -> int:
    """Deterministically mix integers into one 63-bit seed (splitmix64)."""
    h = 0x9E3779B97F4A7C15
    for p in parts:
        h = (h ^ (int(p) & _MASK64)) & _MASK64
        h = (h * 0xBF58476D1CE4E5B9) & _MASK64
        h ^= h >> 27
        h = (h * 0x94D049BB133111EB) & _MASK64
        h ^= h >> 31
    return h & (_MASK64 >> 1)


def _block_generator(seed: int, block: int, stream: int = 0) -> np.random.Generator:
    key = np.array(
        [seed & _MASK64, (block & _MASK64) | (stream << 62)], dtype=np.uint64
    )
    return np.random.Generator(np.random.Philox(key=key))


def path_noise(seed: int, i0: int, i1: int, steps: int, dim: int) -> np.ndarray:
    """Standard normal increments for paths ``[i0, i1)``, block-deterministic."""
    n = i1 - i0
    out = np.empty((n, steps, dim))
    row = 0
    b0, b1 = i0 // _BLOCK, (i1 - 1) // _BLOCK
    for b in range(b0, b1 + 1):
        block = _block_generator(seed, b).standard_normal((_BLOCK, steps, dim))
        lo = max(i0 - b * _BLOCK, 0)
        hi = min(i1 - b * _BLOCK, _BLOCK)
        out[row : row + hi - lo] = block[lo:hi]
        row += hi - lo
    return out


def _initial_states(model: "SdeModel", seed: int, i0: int, i1: int) -> np.ndarray:
    if callable(model.x_init):
        n = i1 - i0
        out = np.empty((n, model.dim))
        row = 0
        for b in range(i0 // _BLOCK, (i1 - 1) // _BLOCK + 1):
            gen = _block_generator(seed, b, stream=1)
            block = np.asarray(model.x_init(gen, _BLOCK), dtype=np.float64)
            if block.shape != (_BLOCK, model.dim):
                raise SimulationError(
                    f"initial sampler returned shape {block.shape}, "
                    f"expected {(_BLOCK, model.dim)}"
                )
            lo = max(i0 - b * _BLOCK, 0)
            hi = min(i1 - b * _BLOCK, _BLOCK)
            out[row : row + hi - lo] = block[lo:hi]
            row += hi - lo
        return out
    x0 = np.asarray(model.x_init, dtype=np.float64).reshape(model.dim)
    return np.tile(x0, (i1 - i0, 1))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_n = n * dt`` with ``t_K = K * dt``."""

    steps: int
    dt: float

    def __post_init__(self):
        if self.steps < 1 or self.dt <= 0:
            raise ValueError(f"invalid grid: steps={self.steps}, dt={self.dt}")

    @property
    def horizon(self) -> float:
        return self.steps * self.dt

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    @classmethod
    def from_horizon(cls, horizon: float, dt: float) -> "TimeGrid":
        steps = round(horizon / dt)
        if abs(steps * dt - horizon) > 1e-9 * max(1.0, horizon):
            raise ValueError(f"dt={dt} does not divide horizon={horizon}")
        return cls(steps, dt)


@dataclass
class SdeModel:
    """One control problem: dynamics plus running and terminal costs.

    ``drift``, ``running_cost`` and ``terminal_cost`` must be written against
    the ops in :mod:`driftopt.tape` so they accept both plain ``(N, d)``
    arrays and tape nodes.  ``sigma(x, t)`` must return a single ``(d, d)``
    matrix for the whole batch; state-dependent diffusion is not supported by
    the differentiable simulator.
    """

    dim: int
    drift: Callable
    sigma: Callable
    running_cost: Callable
    terminal_cost: Callable
    horizon: float
    x_init: np.ndarray | Callable

    def __post_init__(self):
        if not callable(self.x_init):
            self.x_init = np.asarray(self.x_init, dtype=np.float64).reshape(self.dim)
        self._validate()

    def _validate(self):
        """Probe-grid checks: sigma sigma^T positive definite and f >= 0."""
        rng = np.random.Generator(np.random.Philox(key=12345))
        probes = 2.0 * rng.standard_normal((8, self.dim))
        for t in (0.0, 0.5 * self.horizon, self.horizon):
            s = np.asarray(self.sigma(probes, t), dtype=np.float64)
            if s.shape != (self.dim, self.dim):
                raise ValueError(
                    f"sigma must return ({self.dim}, {self.dim}), got {s.shape}"
                )
            eig = np.linalg.eigvalsh(s @ s.T)
            if eig.min() <= 1e-12:
                raise ValueError(
                    f"sigma sigma^T not positive definite at t={t} "
                    f"(min eigenvalue {eig.min():.3e})"
                )
            f = np.asarray(self.running_cost(probes, t), dtype=np.float64)
            if f.shape != (probes.shape[0],):
                raise ValueError(
                    f"running cost must map (N, d) -> (N,), got {f.shape}"
                )
            if f.min() < 0:
                raise ValueError(f"running cost negative on probe grid at t={t}")


@dataclass
class PathBatch:
    """N discretized trajectories plus the gaussians that generated them.

    ``states`` always holds detached values.  When simulated with a tape,
    ``state_nodes[n]`` is the ``(N, d)`` node for time index ``n`` and
    ``control_nodes[n]`` the recorded control output, so downstream losses
    can reuse them without re-running the network.
    """

    states: np.ndarray
    noise: np.ndarray
    seed: int
    grid: TimeGrid
    control_values: np.ndarray
    path_offset: int = 0
    state_nodes: list | None = None
    control_nodes: list | None = None

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    def states_at(self, n: int):
        if self.state_nodes is not None:
            return self.state_nodes[n]
        return self.states[:, n, :]

    def terminal_states(self):
        return self.states_at(self.grid.steps)


@dataclass
class PathFunctionals:
    """Per-path work, Girsanov log-weight, and backward-variable sum."""

    work: np.ndarray
    girsanov_log_rn: np.ndarray
    ytilde: np.ndarray


def _control_output(control, x, t: float):
    out = control(x, t)
    return out


def _check_finite(arr: np.ndarray, what: str, step: int, offset: int) -> None:
    if not np.all(np.isfinite(arr)):
        flat = np.isfinite(arr).reshape(arr.shape[0], -1).all(axis=1)
        bad = int(np.argmin(flat))
        raise SimulationError(
            f"non-finite {what} at step {step}, path {offset + bad}"
        )


def simulate(
    model: SdeModel,
    control,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    *,
    record: Tape | None = None,
    path_offset: int = 0,
) -> PathBatch:
    """Euler-Maruyama under the given control.

    ``X[n+1] = X[n] + (b + sigma u)(X[n], t_n) dt + sigma(X[n], t_n) xi sqrt(dt)``.

    With ``record`` set, states are tape nodes so the whole trajectory is
    differentiable with respect to the control's parameters (the control must
    then be a bound control from :meth:`driftopt.approx.ControlField.bind`).
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if abs(grid.horizon - model.horizon) > 1e-9 * max(1.0, model.horizon):
        raise ValueError(
            f"grid horizon {grid.horizon} does not match model horizon {model.horizon}"
        )
    K, dt, d = grid.steps, grid.dt, model.dim
    sq = math.sqrt(dt)
    noise = path_noise(seed, path_offset, path_offset + n_paths, K, d)
    states = np.empty((n_paths, K + 1, d))
    control_values = np.empty((n_paths, K, d))
    x = _initial_states(model, seed, path_offset, path_offset + n_paths)
    states[:, 0, :] = x
    state_nodes = [x] if record is not None else None
    control_nodes = [] if record is not None else None

    current = x
    for n in range(K):
        t = n * dt
        xv = current.value if isinstance(current, Node) else current
        sig = np.asarray(model.sigma(xv, t), dtype=np.float64)
        u_out = _control_output(control, current, t)
        u_val = u_out.value if isinstance(u_out, Node) else np.asarray(u_out)
        _check_finite(np.atleast_2d(u_val), "control output", n, path_offset)
        control_values[:, n, :] = u_val
        b_out = model.drift(current, t)
        noise_term = (noise[:, n, :] @ sig.T) * sq
        drift_total = ops.add(b_out, ops.matvec(sig, u_out))
        nxt = ops.add(ops.add(current, ops.scale(drift_total, dt)), noise_term)
        xv = nxt.value if isinstance(nxt, Node) else nxt
        _check_finite(xv, "state", n + 1, path_offset)
        states[:, n + 1, :] = xv
        if record is not None:
            state_nodes.append(nxt)
            control_nodes.append(u_out)
        current = nxt

    return PathBatch(
        states=states,
        noise=noise,
        seed=seed,
        grid=grid,
        control_values=control_values,
        path_offset=path_offset,
        state_nodes=state_nodes,
        control_nodes=control_nodes,
    )


def work(batch: PathBatch, model: SdeModel):
    """Per-path work: left-point running cost plus terminal cost.

    ``W_i = sum_{n<K} f(X_n, t_n) dt + g(X_K)``.  Returns a node when the
    batch was recorded on a tape, so the relative-entropy loss can
    differentiate through it.
    """
    K, dt = batch.grid.steps, batch.grid.dt
    total = None
    for n in range(K):
        f_n = model.running_cost(batch.states_at(n), n * dt)
        total = f_n if total is None else ops.add(total, f_n)
    g = model.terminal_cost(batch.terminal_states())
    return ops.add(ops.scale(total, dt), g)


def _control_series(batch: PathBatch, control) -> np.ndarray:
    """Detached control outputs along the batch, shape (N, K, d)."""
    K, dt = batch.grid.steps, batch.grid.dt
    out = np.empty_like(batch.control_values)
    for n in range(K):
        val = control(batch.states[:, n, :], n * dt)
        out[:, n, :] = val
    return out


def girsanov_log_rn(batch: PathBatch, control=None) -> np.ndarray:
    """Per-path ``log(dP / dP^u)`` for the control that generated the batch.

    ``-sum u . xi sqrt(dt) - 1/2 sum |u|^2 dt`` with ``u`` at ``(X_n, t_n)``.
    ``control`` defaults to the recorded values of the control that drove the
    batch.  Detached by design; nothing differentiates through this weight.
    """
    K, dt = batch.grid.steps, batch.grid.dt
    sq = math.sqrt(dt)
    u = batch.control_values if control is None else _control_series(batch, control)
    ito = np.einsum("nkd,nkd->n", u, batch.noise) * sq
    quad = np.einsum("nkd,nkd->n", u, u) * dt
    return -ito - 0.5 * quad


def ytilde(batch: PathBatch, model: SdeModel, control_u, v=None):
    """Per-path backward-variable sum ``Y~`` for ``u`` along paths drawn under ``v``.

    ``Y~ = -sum (u.v) dt - sum f dt - sum u.xi sqrt(dt) + 1/2 sum |u|^2 dt``
    with every integrand at ``(X_n, t_n)``.  ``v`` defaults to the control
    that generated the batch (its recorded values).  The ``v`` branch and the
    states are detached; only ``u`` carries gradients, and only when
    ``control_u`` is a bound control.
    """
    K, dt = batch.grid.steps, batch.grid.dt
    sq = math.sqrt(dt)
    v_vals = batch.control_values if v is None else _control_series(batch, v)
    total = None
    f_total = None
    for n in range(K):
        x_n = batch.states[:, n, :]
        t = n * dt
        u_n = control_u(x_n, t)
        f_n = np.asarray(model.running_cost(x_n, t))
        f_total = f_n if f_total is None else f_total + f_n
        term = ops.sub(
            ops.scale(ops.dot(u_n, u_n), 0.5 * dt),
            ops.add(
                ops.scale(ops.dot(u_n, v_vals[:, n, :]), dt),
                ops.scale(ops.dot(u_n, batch.noise[:, n, :]), sq),
            ),
        )
        total = term if total is None else ops.add(total, term)
    return ops.sub(total, f_total * dt)


def compute_functionals(
    batch: PathBatch, model: SdeModel, control_u, v=None
) -> PathFunctionals:
    """Detached work, Girsanov log-weight, and ``Y~`` in one pass."""
    detached = PathBatch(
        states=batch.states,
        noise=batch.noise,
        seed=batch.seed,
        grid=batch.grid,
        control_values=batch.control_values,
        path_offset=batch.path_offset,
    )
    w = work(detached, model)
    g = girsanov_log_rn(detached)
    y = ytilde(detached, model, control_u, v)
    return PathFunctionals(
        work=np.asarray(w), girsanov_log_rn=np.asarray(g), ytilde=np.asarray(y)
    )
