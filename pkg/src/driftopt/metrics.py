"""Control-quality metrics and estimator-robustness diagnostics.

Everything here consumes simulation batches in fixed-size chunks, so memory
stays bounded for large path counts and results are bitwise independent of
the chunking (per-path noise is a pure function of seed and path index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import losses, sde
from .approx import ZeroControl
from .losses import LossSpec
from .sde import SdeModel, TimeGrid

__all__ = [
    "MetricError",
    "IsreReport",
    "isre",
    "l2_error",
    "l2_error_on_batch",
    "crossing_ratio",
    "StudyRow",
    "RobustnessStudy",
    "tensorisation_study",
    "GradientVarianceReport",
    "gradient_variance_diag",
    "moving_average",
]

_CHUNK = 8192
_EXP_LIMIT = 700.0


class MetricError(RuntimeError):
    """A metric could not be evaluated meaningfully (degenerate weights)."""


@dataclass(frozen=True)
class IsreReport:
    """Importance-sampling relative error of the normalizing-constant estimate."""

    value: float
    mean: float
    std: float
    n_paths: int


def isre(
    model: SdeModel, control, grid: TimeGrid, n_paths: int, seed: int
) -> IsreReport:
    """Relative error std/mean of the importance weights ``exp(-W + G)``.

    Paths are drawn under the control; ``G`` is the Girsanov log-weight back
    to the uncontrolled measure, so the weight mean estimates the
    normalizing constant and the ratio is scale-free.  Zero for the optimal
    control.  Aborts if the weights overflow or all underflow to zero.
    """
    count = 0
    s1 = 0.0
    s2 = 0.0
    for i0 in range(0, n_paths, _CHUNK):
        m = min(_CHUNK, n_paths - i0)
        batch = sde.simulate(model, control, grid, m, seed, path_offset=i0)
        exponent = sde.girsanov_log_rn(batch) - np.asarray(sde.work(batch, model))
        peak = float(exponent.max())
        if peak > _EXP_LIMIT:
            raise MetricError(
                f"isre: importance weight overflow, max exponent {peak:.2f}"
            )
        w = np.exp(exponent)
        s1 += float(w.sum())
        s2 += float((w * w).sum())
        count += m
    if count < 2:
        raise MetricError("isre needs at least 2 paths")
    mean = s1 / count
    if mean <= 0.0:
        raise MetricError(
            "isre: importance weights underflowed to zero; "
            "the control is too far from the sampled region"
        )
    var = max((s2 - count * mean * mean) / (count - 1), 0.0)
    std = math.sqrt(var)
    return IsreReport(value=std / mean, mean=mean, std=std, n_paths=count)


def l2_error(
    model: SdeModel,
    control,
    reference_control,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
) -> float:
    """Mean squared control discrepancy along paths driven by ``control``.

    ``(1/N) sum_i sum_n |u(X_n, t_n) - u_ref(X_n, t_n)|^2 dt``; the recorded
    control values from the simulation are reused for ``u``.
    """
    dt = grid.dt
    acc = 0.0
    for i0 in range(0, n_paths, _CHUNK):
        m = min(_CHUNK, n_paths - i0)
        batch = sde.simulate(model, control, grid, m, seed, path_offset=i0)
        for n in range(grid.steps):
            ref = np.asarray(
                reference_control(batch.states[:, n, :], n * dt), dtype=np.float64
            )
            diff = batch.control_values[:, n, :] - ref
            acc += float((diff * diff).sum()) * dt
    return acc / n_paths


def l2_error_on_batch(batch, control_a, control_b) -> float:
    """Same discrepancy integral with both controls evaluated on one batch.

    Symmetric in its two control arguments, unlike :func:`l2_error` where
    the first control also drives the paths.
    """
    dt = batch.grid.dt
    acc = 0.0
    for n in range(batch.grid.steps):
        x_n = batch.states[:, n, :]
        t = n * dt
        a = np.asarray(control_a(x_n, t), dtype=np.float64)
        b = np.asarray(control_b(x_n, t), dtype=np.float64)
        diff = a - b
        acc += float((diff * diff).sum()) * dt
    return acc / batch.n_paths


def crossing_ratio(
    model: SdeModel,
    control,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    coords: Sequence[int] = (0,),
) -> float:
    """Fraction of paths whose listed terminal coordinates are all positive."""
    coords = tuple(coords)
    if not coords:
        raise ValueError("coords must name at least one coordinate")
    hits = 0
    for i0 in range(0, n_paths, _CHUNK):
        m = min(_CHUNK, n_paths - i0)
        batch = sde.simulate(model, control, grid, m, seed, path_offset=i0)
        terminal = batch.states[:, -1, :]
        crossed = np.ones(m, dtype=bool)
        for c in coords:
            crossed &= terminal[:, c] > 0.0
        hits += int(crossed.sum())
    return hits / n_paths


@dataclass(frozen=True)
class StudyRow:
    """One divergence estimate for one replication at one copy count."""

    kind: str
    copies: int
    rep: int
    estimate: float


@dataclass
class RobustnessStudy:
    """Replicated divergence estimates across tensorised copy counts."""

    rows: list[StudyRow]
    n_paths: int

    def estimates(self, kind: str, copies: int) -> np.ndarray:
        vals = [r.estimate for r in self.rows if r.kind == kind and r.copies == copies]
        return np.asarray(vals)

    def relative_error(self, kind: str, copies: int) -> float:
        """std/|mean| over replications; inf once any replication saturated."""
        vals = self.estimates(kind, copies)
        if len(vals) < 2:
            raise ValueError(f"need >= 2 replications for {kind}, M={copies}")
        if not np.isfinite(vals).all():
            return float("inf")
        mean = vals.mean()
        if mean == 0.0:
            return float("inf")
        return float(vals.std(ddof=1) / abs(mean))


_STUDY_KINDS = ("log_variance", "cross_entropy", "variance")


def tensorisation_study(
    model: SdeModel,
    base_free_energy: float,
    m_values: Sequence[int],
    n_paths: int,
    reps: int,
    seed: int,
    grid: TimeGrid,
    kinds: Sequence[str] = _STUDY_KINDS,
) -> RobustnessStudy:
    """How divergence estimates degrade on products of independent copies.

    The M-fold product problem has work ``W = sum_m W_m`` over independent
    copies and free energy ``M * base_free_energy`` (minus log of the base
    normalizing constant), so it is simulated by summing per-copy work from
    M independent batches of the base model under zero control.  For each
    (kind, M, rep) one divergence estimate is recorded:

    - ``log_variance``: sample variance of ``W``;
    - ``cross_entropy``: mean of ``l * exp(l)`` with ``l = -W + M * free``;
    - ``variance``: sample variance of ``exp(l)``.

    A replication whose exponent overflows float64 is recorded as ``inf``
    rather than dropped, which drives the relative error to ``inf``.
    """
    for kind in kinds:
        if kind not in _STUDY_KINDS:
            raise ValueError(f"unknown study kind {kind!r}; known: {_STUDY_KINDS}")
    if reps < 2:
        raise ValueError("need at least 2 replications")
    zero = ZeroControl(model.dim)
    rows: list[StudyRow] = []
    for copies in m_values:
        for rep in range(reps):
            w_total = np.zeros(n_paths)
            for copy in range(copies):
                batch = sde.simulate(
                    model, zero, grid, n_paths,
                    sde.mix_seed(seed, copies, rep, copy),
                )
                w_total += np.asarray(sde.work(batch, model))
            log_weight = -w_total + copies * base_free_energy
            peak = float(log_weight.max())
            for kind in kinds:
                if kind == "log_variance":
                    est = float(w_total.var(ddof=1))
                elif kind == "cross_entropy":
                    if peak > _EXP_LIMIT:
                        est = float("inf")
                    else:
                        est = float((log_weight * np.exp(log_weight)).mean())
                else:
                    if peak > 0.5 * _EXP_LIMIT:
                        est = float("inf")
                    else:
                        est = float(np.exp(log_weight).var(ddof=1))
                rows.append(StudyRow(kind, copies, rep, est))
    return RobustnessStudy(rows=rows, n_paths=n_paths)


@dataclass
class GradientVarianceReport:
    """Per-component spread of a loss gradient across fresh batches.

    Components whose mean gradient sits below the floor are excluded from
    the relative aggregate, since std/|mean| is meaningless at a vanishing
    mean; their variances remain available in ``component_var``.
    """

    component_mean: np.ndarray
    component_var: np.ndarray
    relative_spread: float
    n_used: int
    reps: int
    n_paths: int


def gradient_variance_diag(
    model: SdeModel,
    control,
    spec: LossSpec,
    grid: TimeGrid,
    n_paths: int,
    reps: int,
    seed: int,
    floor: float = 0.01,
) -> GradientVarianceReport:
    """Estimate gradient noise by re-running one estimator on fresh batches."""
    if reps < 2:
        raise ValueError("need at least 2 replications")
    grads = []
    for rep in range(reps):
        value = losses.evaluate(
            spec, model, control, grid, n_paths, sde.mix_seed(seed, rep)
        )
        grads.append(value.gradient)
    stacked = np.stack(grads)
    comp_mean = stacked.mean(axis=0)
    comp_var = stacked.var(axis=0, ddof=1)
    used = np.abs(comp_mean) > floor
    if used.any():
        rel = float(np.mean(np.sqrt(comp_var[used]) / np.abs(comp_mean[used])))
    else:
        rel = float("nan")
    return GradientVarianceReport(
        component_mean=comp_mean,
        component_var=comp_var,
        relative_spread=rel,
        n_used=int(used.sum()),
        reps=reps,
        n_paths=n_paths,
    )


def moving_average(values: Sequence[float], window: int = 30) -> np.ndarray:
    """Trailing moving average; early entries average what is available."""
    if window < 1:
        raise ValueError("window must be positive")
    arr = np.asarray(values, dtype=np.float64)
    out = np.empty_like(arr)
    csum = np.concatenate([[0.0], np.cumsum(arr)])
    for i in range(len(arr)):
        lo = max(0, i + 1 - window)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out
