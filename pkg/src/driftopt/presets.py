"""Built-in problem families with calibrated default hyperparameters.

Each preset builds the model (drift, noise, costs), a time grid, a matching
control architecture, and, where a closed form exists, the reference control
and free energy.  Drifts and costs are written with tape primitives so the
relative-entropy loss can differentiate through the dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import approx, reference
from . import tape as ops
from .sde import SdeModel, TimeGrid

__all__ = [
    "ProblemBundle",
    "PRESET_NAMES",
    "ou_linear",
    "ou_quadratic",
    "double_well",
    "make_preset",
]

PRESET_NAMES = ("ou_linear", "ou_quadratic", "double_well")


@dataclass
class ProblemBundle:
    """A ready-to-train problem: model, grid, architecture, references."""

    name: str
    model: SdeModel
    grid: TimeGrid
    arch: Any
    reference_control: Any | None = None
    minus_log_z: float | None = None
    defaults: dict[str, Any] = field(default_factory=dict)
    problem: Any | None = None


def _zero_cost(x, t: float) -> np.ndarray:
    rows = np.asarray(getattr(x, "value", x)).shape[0]
    return np.zeros(rows)


def _const_sigma(mat: np.ndarray) -> Callable:
    mat = np.asarray(mat, dtype=np.float64)

    def sigma(x, t: float) -> np.ndarray:
        return mat

    return sigma


def _perturbed_pair(dim: int, problem_seed: int, nu: float):
    """Draw ``A = -I + noise`` then ``B = I + noise`` from one stream.

    The draw order (A first, then B, row-major) is part of the definition:
    the same problem seed must always yield the same problem instance.
    """
    rng = np.random.default_rng(problem_seed)
    eye = np.eye(dim)
    a = -eye + nu * rng.standard_normal((dim, dim))
    b = eye + nu * rng.standard_normal((dim, dim))
    return a, b


def ou_linear(
    dim: int = 1,
    problem_seed: int = 0,
    dt: float = 0.01,
    horizon: float = 1.0,
    nu: float = 0.1,
    hidden: tuple[int, ...] = (30, 30),
) -> ProblemBundle:
    """Linear drift, constant noise, linear terminal cost ``sum_i x_i``.

    Admits the explicit optimal control and free energy from
    :mod:`driftopt.reference`, which makes it the main testbed for
    convergence criteria.
    """
    a, b = _perturbed_pair(dim, problem_seed, nu)
    gamma = np.ones(dim)

    def drift(x, t: float):
        return ops.matvec(a, x)

    def terminal(x):
        return ops.dot(x, gamma)

    model = SdeModel(
        dim=dim,
        drift=drift,
        sigma=_const_sigma(b),
        running_cost=_zero_cost,
        terminal_cost=terminal,
        horizon=horizon,
        x_init=np.zeros(dim),
    )
    grid = TimeGrid.from_horizon(horizon, dt)
    problem = reference.OuLinearProblem(
        A=a, B=b, gamma=gamma, horizon=horizon, x_init=np.zeros(dim)
    )
    defaults = {
        "loss": "log_variance",
        "optimizer": "adam",
        "eta": 0.01 if dim <= 20 else 0.001,
        "n_paths": 200 if dim <= 20 else 500,
        "iterations": 2000,
    }
    return ProblemBundle(
        name="ou_linear",
        model=model,
        grid=grid,
        arch=approx.DenseNet(dim=dim, hidden=tuple(hidden), activation="relu"),
        reference_control=reference.ou_linear_u_star(problem),
        minus_log_z=reference.ou_linear_log_z(problem),
        defaults=defaults,
        problem=problem,
    )


def ou_quadratic(
    dim: int = 10,
    problem_seed: int = 0,
    dt: float = 0.01,
    horizon: float = 1.0,
    nu: float = 0.1,
    random_start: bool = False,
) -> ProblemBundle:
    """Linear drift with quadratic running and terminal costs.

    ``f = x . P x`` with ``P = I/2`` and ``g = x . R x`` with ``R = I``; the
    optimal control is linear in the state with a Riccati-equation gain, so
    the natural architecture is one gain matrix per time step.
    """
    a, b = _perturbed_pair(dim, problem_seed, nu)
    p = 0.5 * np.eye(dim)
    r = np.eye(dim)

    def drift(x, t: float):
        return ops.matvec(a, x)

    def running(x, t: float):
        return ops.dot(ops.matvec(p, x), x)

    def terminal(x):
        return ops.dot(ops.matvec(r, x), x)

    if random_start:
        def x_init(gen: np.random.Generator, n: int) -> np.ndarray:
            return gen.standard_normal((n, dim))
    else:
        x_init = np.zeros(dim)

    grid = TimeGrid.from_horizon(horizon, dt)
    model = SdeModel(
        dim=dim,
        drift=drift,
        sigma=_const_sigma(b),
        running_cost=running,
        terminal_cost=terminal,
        horizon=horizon,
        x_init=x_init,
    )
    riccati = reference.riccati_solve(a, b, p, r, horizon)
    defaults = {
        "loss": "log_variance",
        "optimizer": "adam",
        "eta": 0.02,
        "n_paths": 200,
        "iterations": 800,
    }
    return ProblemBundle(
        name="ou_quadratic",
        model=model,
        grid=grid,
        arch=approx.TimeIndexedLinear(dim=dim, steps=grid.steps, dt=dt),
        reference_control=reference.lqg_u_star(riccati),
        minus_log_z=None,
        defaults=defaults,
        problem=riccati,
    )


def double_well(
    dim: int = 1,
    dt: float = 0.005,
    horizon: float = 1.0,
    hidden: tuple[int, ...] = (30, 30),
) -> ProblemBundle:
    """Gradient drift of a quartic double-well potential, metastable at -1.

    ``b_i = -4 k_i x_i (x_i^2 - 1)`` and ``g = sum_i nu_i (x_i - 1)^2`` with
    unit noise; paths start in the left well and the terminal cost pays for
    staying there.  In one dimension the well and cost weights are 5 and 3;
    in higher dimension only the first three coordinates keep them, the
    rest drop to 1.
    """
    if dim == 1:
        kappa = np.array([5.0])
        nu_cost = np.array([3.0])
    else:
        kappa = np.ones(dim)
        nu_cost = np.ones(dim)
        kappa[:3] = 5.0
        nu_cost[:3] = 3.0
    four_kappa = 4.0 * kappa
    ones = np.ones(dim)

    def drift(x, t: float):
        cubic = ops.mul(x, ops.sub(ops.square(x), ones))
        return ops.scale(ops.mul(cubic, four_kappa), -1.0)

    def terminal(x):
        return ops.dot(ops.square(ops.sub(x, ones)), nu_cost)

    grid = TimeGrid.from_horizon(horizon, dt)
    model = SdeModel(
        dim=dim,
        drift=drift,
        sigma=_const_sigma(np.eye(dim)),
        running_cost=_zero_cost,
        terminal_cost=terminal,
        horizon=horizon,
        x_init=-np.ones(dim),
    )
    widths = (dim + 1, *hidden, dim)
    defaults = {
        "loss": "log_variance",
        "optimizer": "adam",
        "eta": 0.05,
        "n_paths": 1000 if dim == 1 else 500,
        "iterations": 600 if dim == 1 else 300,
    }
    return ProblemBundle(
        name="double_well",
        model=model,
        grid=grid,
        arch=approx.FeedForwardNet(widths=widths, activation="tanh"),
        reference_control=None,
        minus_log_z=None,
        defaults=defaults,
        problem=None,
    )


FACTORIES = {
    "ou_linear": ou_linear,
    "ou_quadratic": ou_quadratic,
    "double_well": double_well,
}


def make_preset(name: str, **kwargs) -> ProblemBundle:
    """Build a preset by name; unknown names list the available ones."""
    try:
        factory = FACTORIES[name]
    except KeyError:
        raise ValueError(
            f"unknown preset {name!r}; available: {PRESET_NAMES}"
        ) from None
    return factory(**kwargs)
