"""Reference solutions: closed forms, Riccati integration, 1-d finite differences.

These are the yardsticks the Monte Carlo machinery is measured against.  The
linear-drift problem admits an explicit optimal control and normalizing
constant; linear-quadratic problems reduce to a matrix Riccati equation; and
generic 1-d problems are handled by a Crank-Nicolson solve of the
exponentially transformed value equation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from . import tape as ops

__all__ = [
    "expm",
    "IntegrationError",
    "OuLinearProblem",
    "TimeVaryingConstantControl",
    "LinearStateControl",
    "ou_linear_u_star",
    "ou_linear_log_z",
    "RiccatiSolution",
    "riccati_solve",
    "lqg_u_star",
    "FdSolution",
    "FdControl",
    "FdPositivityError",
    "hjb_fd_1d",
]

logger = logging.getLogger(__name__)


class IntegrationError(RuntimeError):
    """A deterministic integration diverged or failed to converge."""


def expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential (scipy's scaling-and-squaring Pade implementation)."""
    return scipy.linalg.expm(np.asarray(a, dtype=np.float64))


def _rows_like(x) -> int | None:
    arr = getattr(x, "value", x)
    arr = np.asarray(arr)
    return arr.shape[0] if arr.ndim == 2 else None


@dataclass
class TimeVaryingConstantControl:
    """State-independent control ``t -> c(t)``, broadcast across a batch.

    Output carries no parameters, so it is returned as a plain array even
    for node-valued states.
    """

    dim: int
    coefficient: Callable[[float], np.ndarray]

    def __call__(self, x, t: float) -> np.ndarray:
        c = np.asarray(self.coefficient(float(t)), dtype=np.float64)
        rows = _rows_like(x)
        if rows is None:
            return c
        return np.broadcast_to(c, (rows, self.dim)).copy()


@dataclass
class LinearStateControl:
    """Linear-in-state control ``u(x, t) = G(t) x`` with a (d, d) gain."""

    dim: int
    gain: Callable[[float], np.ndarray]

    def __call__(self, x, t: float):
        g = np.asarray(self.gain(float(t)), dtype=np.float64)
        return ops.matvec(g, x)


@dataclass(frozen=True)
class OuLinearProblem:
    """Linear drift ``Ax``, constant noise matrix ``B``, terminal cost ``gamma . x``."""

    A: np.ndarray
    B: np.ndarray
    gamma: np.ndarray
    horizon: float
    x_init: np.ndarray

    @property
    def dim(self) -> int:
        return self.A.shape[0]


def ou_linear_u_star(problem: OuLinearProblem) -> TimeVaryingConstantControl:
    """Optimal control for the linear problem: ``-B^T exp(A^T (T-t)) gamma``.

    State-independent; per-time vectors are cached since training grids
    revisit the same time points every iteration.
    """
    cache: dict[float, np.ndarray] = {}
    at = np.asarray(problem.A, dtype=np.float64).T
    b_t = np.asarray(problem.B, dtype=np.float64).T
    gamma = np.asarray(problem.gamma, dtype=np.float64)
    horizon = float(problem.horizon)

    def coefficient(t: float) -> np.ndarray:
        hit = cache.get(t)
        if hit is None:
            hit = -b_t @ (expm(at * (horizon - t)) @ gamma)
            cache[t] = hit
        return hit

    return TimeVaryingConstantControl(problem.dim, coefficient)


def _simpson_matrix_integral(
    integrand: Callable[[float], np.ndarray],
    upper: float,
    tol: float = 1e-8,
    n_start: int = 8,
    n_max: int = 1 << 20,
) -> np.ndarray:
    """Composite Simpson with interval doubling and Richardson extrapolation."""

    def composite(n: int) -> np.ndarray:
        h = upper / n
        total = integrand(0.0) + integrand(upper)
        for k in range(1, n):
            total = total + (4.0 if k % 2 else 2.0) * integrand(k * h)
        return total * (h / 3.0)

    n = n_start
    coarse = composite(n)
    while n <= n_max:
        n *= 2
        fine = composite(n)
        err = np.max(np.abs(fine - coarse)) / 15.0
        if err < tol:
            return fine + (fine - coarse) / 15.0
        coarse = fine
    raise IntegrationError(
        f"Simpson integration did not reach tol {tol} within {n_max} intervals"
    )


def ou_linear_log_z(problem: OuLinearProblem) -> float:
    """Minus the log normalizing constant of the linear problem.

    The terminal state is Gaussian with mean ``exp(A T) x0`` and covariance
    ``S = int_0^T exp(A s) B B^T exp(A^T s) ds``, so
    ``-log Z = gamma . mean - gamma^T S gamma / 2``.  The covariance
    integral is evaluated by adaptive Simpson quadrature to 1e-8.
    """
    a = np.asarray(problem.A, dtype=np.float64)
    b = np.asarray(problem.B, dtype=np.float64)
    gamma = np.asarray(problem.gamma, dtype=np.float64)
    horizon = float(problem.horizon)
    bbt = b @ b.T

    def integrand(s: float) -> np.ndarray:
        e = expm(a * s)
        return e @ bbt @ e.T

    cov = _simpson_matrix_integral(integrand, horizon)
    mean = expm(a * horizon) @ np.asarray(problem.x_init, dtype=np.float64)
    return float(gamma @ mean - 0.5 * gamma @ cov @ gamma)


@dataclass
class RiccatiSolution:
    """Backward Riccati solve on an even time grid, ascending in time."""

    ts: np.ndarray
    F: np.ndarray
    B: np.ndarray

    def F_at(self, t: float) -> np.ndarray:
        """Linear interpolation between grid matrices, clamped to [0, T]."""
        ts = self.ts
        t = min(max(float(t), ts[0]), ts[-1])
        k = int(np.searchsorted(ts, t, side="right")) - 1
        if k >= len(ts) - 1:
            return self.F[-1]
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        return (1.0 - w) * self.F[k] + w * self.F[k + 1]


def riccati_solve(
    A: np.ndarray,
    B: np.ndarray,
    P: np.ndarray,
    R: np.ndarray,
    horizon: float,
    n_steps: int = 512,
) -> RiccatiSolution:
    """Integrate ``dF/dt = -A^T F - F A + 2 F B B^T F - P`` back from ``F(T) = R``.

    Classic fourth-order Runge-Kutta on the time-reversed equation, with a
    symmetrization after every step so roundoff cannot accumulate asymmetry.
    """
    a = np.asarray(A, dtype=np.float64)
    b = np.asarray(B, dtype=np.float64)
    p = np.asarray(P, dtype=np.float64)
    r = np.asarray(R, dtype=np.float64)
    bbt = b @ b.T

    def reversed_rhs(h_mat: np.ndarray) -> np.ndarray:
        return a.T @ h_mat + h_mat @ a - 2.0 * h_mat @ bbt @ h_mat + p

    h = horizon / n_steps
    mats = np.empty((n_steps + 1, a.shape[0], a.shape[0]))
    cur = r.copy()
    mats[n_steps] = cur
    for k in range(n_steps):
        k1 = reversed_rhs(cur)
        k2 = reversed_rhs(cur + 0.5 * h * k1)
        k3 = reversed_rhs(cur + 0.5 * h * k2)
        k4 = reversed_rhs(cur + h * k3)
        cur = cur + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        cur = 0.5 * (cur + cur.T)
        if not np.isfinite(cur).all():
            raise IntegrationError(
                f"Riccati integration blew up at t = {horizon - (k + 1) * h:.6f}"
            )
        mats[n_steps - 1 - k] = cur
    ts = np.linspace(0.0, horizon, n_steps + 1)
    return RiccatiSolution(ts=ts, F=mats, B=b)


def lqg_u_star(solution: RiccatiSolution) -> LinearStateControl:
    """Optimal linear-quadratic control ``u(x, t) = -2 B^T F(t) x``."""
    b_t = solution.B.T

    def gain(t: float) -> np.ndarray:
        return -2.0 * b_t @ solution.F_at(t)

    return LinearStateControl(solution.B.shape[0], gain)


class FdPositivityError(RuntimeError):
    """The transformed density dropped to zero or below during the FD sweep."""


@dataclass
class FdSolution:
    """Grid solution of the 1-d transformed value equation.

    ``psi[k, i]`` holds the solution at time ``ts[k]`` and node ``xs[i]``;
    ``V = -log(psi)`` and ``u = -sigma dV/dx`` are tabulated on the same
    grid.
    """

    xs: np.ndarray
    ts: np.ndarray
    psi: np.ndarray
    V: np.ndarray
    u: np.ndarray

    def value_at(self, x: float, t: float) -> float:
        """Bilinear interpolation of V, clamped to the grid."""
        return float(_bilinear(self.V, self.xs, self.ts, np.atleast_1d(x), t)[0])


@dataclass
class FdControl:
    """Callable control backed by the tabulated FD solution.

    Bilinear interpolation inside the grid; queries outside the spatial
    domain are clamped to the nearest node, counted, and reported once via
    the logger.
    """

    solution: FdSolution
    dim: int = 1
    extrapolation_count: int = 0

    def __call__(self, x, t: float) -> np.ndarray:
        arr = np.asarray(getattr(x, "value", x), dtype=np.float64)
        flat = arr.reshape(-1)
        xs = self.solution.xs
        clipped = np.clip(flat, xs[0], xs[-1])
        outside = int((flat != clipped).sum())
        if outside:
            if self.extrapolation_count == 0:
                logger.warning(
                    "FD control queried outside [%g, %g]; clamping to the boundary",
                    xs[0], xs[-1],
                )
            self.extrapolation_count += outside
        vals = _bilinear(self.solution.u, xs, self.solution.ts, clipped, float(t))
        if arr.ndim == 2:
            return vals.reshape(arr.shape[0], 1)
        return vals.reshape(arr.shape)


def _bilinear(
    table: np.ndarray, xs: np.ndarray, ts: np.ndarray, x: np.ndarray, t: float
) -> np.ndarray:
    t = min(max(t, float(ts[0])), float(ts[-1]))
    k = min(int(np.searchsorted(ts, t, side="right")) - 1, len(ts) - 2)
    wt = (t - ts[k]) / (ts[k + 1] - ts[k])
    row = (1.0 - wt) * table[k] + wt * table[k + 1]
    i = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2)
    wx = (x - xs[i]) / (xs[i + 1] - xs[i])
    return (1.0 - wx) * row[i] + wx * row[i + 1]


def hjb_fd_1d(
    model,
    x_lo: float = -3.0,
    x_hi: float = 3.0,
    n_x: int = 601,
    n_t: int = 2000,
) -> FdSolution:
    """Crank-Nicolson solve of the transformed 1-d value equation.

    Solves ``psi_t + (sigma^2 / 2) psi_xx + b psi_x - f psi = 0`` backward
    from ``psi(., T) = exp(-g)`` with reflecting (zero-derivative) boundary
    conditions, then reads off ``V = -log(psi)`` and the optimal control
    ``u = -sigma V_x`` by central differences.  Aborts if psi loses
    positivity, which signals a domain or resolution problem.
    """
    if model.dim != 1:
        raise ValueError(f"finite-difference solver is 1-d only, got dim {model.dim}")
    xs = np.linspace(x_lo, x_hi, n_x)
    hx = xs[1] - xs[0]
    ts = np.linspace(0.0, model.horizon, n_t + 1)
    ht = ts[1] - ts[0]
    cols = xs.reshape(-1, 1)

    def operator_bands(t: float):
        """Tridiagonal bands of L psi = (s^2/2) psi_xx + b psi_x - f psi."""
        sig = float(np.asarray(model.sigma(cols, t))[0, 0])
        diff = 0.5 * sig * sig / (hx * hx)
        b_vals = np.asarray(model.drift(cols, t), dtype=np.float64).reshape(-1)
        f_vals = np.asarray(model.running_cost(cols, t), dtype=np.float64)
        adv = b_vals / (2.0 * hx)
        lower = np.full(n_x, diff) - adv
        diag = np.full(n_x, -2.0 * diff) - f_vals
        upper = np.full(n_x, diff) + adv
        # Reflecting boundaries: the ghost node mirrors the interior
        # neighbour, which folds the off-diagonal term back onto it and
        # kills the advection contribution at the wall.
        upper[0] = 2.0 * diff
        lower[-1] = 2.0 * diff
        return lower, diag, upper

    psi = np.empty((n_t + 1, n_x))
    psi[n_t] = np.exp(-np.asarray(model.terminal_cost(cols), dtype=np.float64))
    for k in range(n_t - 1, -1, -1):
        lo_new, di_new, up_new = operator_bands(ts[k])
        lo_old, di_old, up_old = operator_bands(ts[k + 1])
        prev = psi[k + 1]
        rhs = prev + 0.5 * ht * (
            di_old * prev
            + np.concatenate([up_old[:-1] * prev[1:], [0.0]])
            + np.concatenate([[0.0], lo_old[1:] * prev[:-1]])
        )
        ab = np.zeros((3, n_x))
        ab[0, 1:] = -0.5 * ht * up_new[:-1]
        ab[1] = 1.0 - 0.5 * ht * di_new
        ab[2, :-1] = -0.5 * ht * lo_new[1:]
        cur = scipy.linalg.solve_banded((1, 1), ab, rhs)
        if cur.min() <= 0.0:
            raise FdPositivityError(
                f"psi lost positivity at t = {ts[k]:.6f} "
                f"(min {cur.min():.3e}); widen the domain or refine the grid"
            )
        psi[k] = cur

    value = -np.log(psi)
    sig0 = float(np.asarray(model.sigma(cols, 0.0))[0, 0])
    grad = np.gradient(value, xs, axis=1)
    u_tab = -sig0 * grad
    return FdSolution(xs=xs, ts=ts, psi=psi, V=value, u=u_tab)
