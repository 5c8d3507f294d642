"""CSV builders shaped like the training CLI's documented output tables.

The plotting package touches the trainer only through these column sets,
so the fixtures synthesize rows rather than import anything from it.
"""

import csv

import matplotlib.pyplot as plt
import numpy as np
import pytest

RESULT_COLUMNS = ["iteration", "loss", "grad_norm", "isre", "l2_error", "wall_ms"]


@pytest.fixture(autouse=True)
def close_figures():
    yield
    plt.close("all")


def write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


@pytest.fixture
def make_results(tmp_path):
    """results.csv factory: metric columns populated every fifth row."""

    def make(subdir, n=60, seed=0, floor=1e-3):
        rng = np.random.default_rng(seed)
        rows = []
        for j in range(n):
            on_cadence = j % 5 == 0 or j == n - 1
            isre = (
                5.0 * np.exp(-j / 12.0) + floor * (1.0 + rng.random())
                if on_cadence else float("nan")
            )
            l2 = (
                2.0 * np.exp(-j / 10.0) + floor * (1.0 + rng.random())
                if on_cadence else float("nan")
            )
            loss = 1.5 * np.exp(-j / 9.0) + 0.02 * rng.standard_normal()
            rows.append([j, loss, 0.3 * np.exp(-j / 20.0), isre, l2, 4.0])
        return write_csv(tmp_path / subdir / "results.csv", RESULT_COLUMNS, rows)

    return make


@pytest.fixture
def make_fd_grid(tmp_path):
    """fd_grid.csv factory: x sweeps fastest, a handful of time slices."""

    def make(n_x=41, ts=(0.0, 0.25, 0.5, 0.75, 1.0)):
        xs = np.linspace(-2.0, 2.0, n_x)
        rows = []
        for t in ts:
            for x in xs:
                v = (x * x - 1.0) ** 2 + 0.5 * (1.0 - t)
                u = -4.0 * x * (x * x - 1.0) * (1.0 - 0.3 * t)
                rows.append([x, t, v, u])
        return write_csv(tmp_path / "ref" / "fd_grid.csv",
                         ["x", "t", "V", "u"], rows)

    return make


@pytest.fixture
def make_control_samples(tmp_path):
    """control_samples.csv factory, matching the eval exporter's columns."""

    def make(name="eval", n_x=41, ts=(0.0, 0.5), xlo=-2.0, xhi=2.0):
        xs = np.linspace(xlo, xhi, n_x)
        rows = []
        for t in ts:
            for x in xs:
                u = -3.8 * x * (x * x - 0.98) * (1.0 - 0.3 * t)
                rows.append([x, t, u])
        return write_csv(tmp_path / name / "control_samples.csv",
                         ["x", "t", "u_1"], rows)

    return make


@pytest.fixture
def make_u_star(tmp_path):
    """u_star.csv factory: the time table of a state-independent control."""

    def make(n_t=21, dim=1):
        ts = np.linspace(0.0, 1.0, n_t)
        header = ["t"] + [f"u_{i + 1}" for i in range(dim)]
        rows = [[t] + [-np.exp(-(1.0 - t)) * (0.5 + 0.1 * i) for i in range(dim)]
                for t in ts]
        return write_csv(tmp_path / "ref" / "u_star.csv", header, rows)

    return make


@pytest.fixture
def make_tensorisation(tmp_path):
    """tensorisation.csv factory: flat log-variance error, exploding
    cross-entropy error, one row per (kind, copies, rep)."""

    def make(m_values=(1, 2, 4, 8, 16, 32), reps=3):
        rng = np.random.default_rng(5)
        rows = []
        for kind, base, growth in (("log_variance", 0.014, 1.0),
                                   ("cross_entropy", 0.05, 1.12),
                                   ("variance", 0.03, 1.3)):
            for m in m_values:
                rel = base * growth ** m
                for rep in range(reps):
                    est = 0.4 * m * (1.0 + rel * rng.standard_normal())
                    rows.append([kind, m, rep, est, rel])
        return write_csv(tmp_path / "study" / "tensorisation.csv",
                         ["kind", "copies", "rep", "estimate", "relative_error"],
                         rows)

    return make


@pytest.fixture
def make_grad_variance(tmp_path):
    """grad_variance.csv factory with the precomputed smoothed column."""

    def make(n=80, seed=3):
        rng = np.random.default_rng(seed)
        raw = 0.8 * np.exp(-np.arange(n) / 18.0) + 0.01
        raw *= np.exp(0.4 * rng.standard_normal(n))
        smoothed = np.empty(n)
        for i in range(n):
            lo = max(0, i - 29)
            smoothed[i] = raw[lo:i + 1].mean()
        rows = [[i, raw[i], smoothed[i], 64] for i in range(n)]
        return write_csv(tmp_path / "study" / "grad_variance.csv",
                         ["iteration", "relative_spread",
                          "relative_spread_smoothed", "n_used"],
                         rows)

    return make
