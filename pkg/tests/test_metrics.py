"""Importance-sampling diagnostics, error metrics, and robustness studies."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from driftopt import tape as tp
from driftopt.approx import ZeroControl, init
from driftopt.losses import LossSpec
from driftopt.metrics import (
    MetricError,
    RobustnessStudy,
    StudyRow,
    crossing_ratio,
    gradient_variance_diag,
    isre,
    l2_error,
    l2_error_on_batch,
    moving_average,
    tensorisation_study,
)
from driftopt.presets import double_well, ou_linear
from driftopt.reference import TimeVaryingConstantControl
from driftopt.sde import SdeModel, TimeGrid, simulate


def flat_model(dim=1, g_shift=0.0):
    """Zero drift and zero running cost; terminal cost is a constant shift.

    With zero control the importance weights are exp(-g_shift) for every
    path, which pins down each metric by hand.
    """
    shift = float(g_shift)

    def drift(x, t):
        return tp.scale(x, 0.0)

    def running(x, t):
        rows = np.asarray(getattr(x, "value", x)).shape[0]
        return np.zeros(rows)

    def terminal(x):
        zero = tp.dot(x, np.zeros(dim))
        return tp.add(zero, np.full(1, shift)) if shift else zero

    return SdeModel(dim=dim, drift=drift, sigma=lambda x, t: np.eye(dim),
                    running_cost=running, terminal_cost=terminal,
                    horizon=1.0, x_init=np.zeros(dim))


GRID = TimeGrid.from_horizon(1.0, 0.1)


class TestIsre:
    def test_flat_problem_has_zero_relative_error(self):
        """f = 0, g = 0, u = 0 makes every weight exactly one."""
        report = isre(flat_model(), ZeroControl(1), GRID, n_paths=64, seed=0)
        assert report.value == 0.0
        assert report.mean == 1.0
        assert report.n_paths == 64

    def test_matches_direct_weight_statistics(self):
        model = flat_model(g_shift=0.0)

        def g(x):
            return tp.square(tp.dot(x, np.ones(1)))

        model = SdeModel(dim=1, drift=model.drift, sigma=model.sigma,
                         running_cost=model.running_cost, terminal_cost=g,
                         horizon=1.0, x_init=np.zeros(1))
        report = isre(model, ZeroControl(1), GRID, n_paths=500, seed=3)
        batch = simulate(model, ZeroControl(1), GRID, 500, 3)
        w = np.exp(-batch.terminal_states() ** 2).ravel()
        assert_allclose(report.mean, w.mean(), rtol=1e-12)
        assert_allclose(report.value, w.std(ddof=1) / w.mean(), rtol=1e-12)

    def test_chunked_evaluation_is_exact_across_the_boundary(self):
        """Totals for 8192 + 17 paths equal one unchunked accumulation."""
        model = flat_model()

        def g(x):
            return tp.dot(x, np.ones(1))

        model = SdeModel(dim=1, drift=model.drift, sigma=model.sigma,
                         running_cost=model.running_cost, terminal_cost=g,
                         horizon=1.0, x_init=np.zeros(1))
        grid = TimeGrid.from_horizon(1.0, 0.5)
        n = 8192 + 17
        report = isre(model, ZeroControl(1), grid, n_paths=n, seed=9)
        batch = simulate(model, ZeroControl(1), grid, n, 9)
        w = np.exp(-batch.terminal_states().ravel())
        assert_allclose(report.mean, w.mean(), rtol=1e-12)
        assert_allclose(report.std, w.std(ddof=1), rtol=1e-12)

    def test_same_seed_reproduces_the_report(self):
        model = flat_model(g_shift=0.3)
        a = isre(model, ZeroControl(1), GRID, n_paths=128, seed=5)
        b = isre(model, ZeroControl(1), GRID, n_paths=128, seed=5)
        assert a == b

    def test_overflowing_weights_raise(self):
        with pytest.raises(MetricError, match="overflow"):
            isre(flat_model(g_shift=-800.0), ZeroControl(1), GRID,
                 n_paths=16, seed=0)

    def test_underflowed_weights_raise(self):
        with pytest.raises(MetricError, match="underflow"):
            isre(flat_model(g_shift=800.0), ZeroControl(1), GRID,
                 n_paths=16, seed=0)


class TestL2Error:
    def test_zero_when_control_equals_reference(self):
        err = l2_error(flat_model(), ZeroControl(1), ZeroControl(1),
                       GRID, n_paths=32, seed=1)
        assert err == 0.0

    def test_constant_gap_integrates_to_c_squared_times_horizon(self):
        """A constant reference c against the zero control gives |c|^2 T
        exactly, independent of the noise."""
        c = np.array([0.75, -0.5])
        ref = TimeVaryingConstantControl(dim=2, coefficient=lambda t: c)
        err = l2_error(flat_model(dim=2), ZeroControl(2), ref,
                       GRID, n_paths=16, seed=2)
        assert_allclose(err, float(c @ c) * 1.0, rtol=1e-12)

    def test_on_batch_variant_is_symmetric(self):
        c = np.array([1.25])
        ref = TimeVaryingConstantControl(dim=1, coefficient=lambda t: c)
        batch = simulate(flat_model(), ZeroControl(1), GRID, 8, seed=4)
        ab = l2_error_on_batch(batch, ZeroControl(1), ref)
        ba = l2_error_on_batch(batch, ref, ZeroControl(1))
        assert_allclose(ab, ba, rtol=1e-14)
        assert_allclose(ab, 1.25 ** 2, rtol=1e-12)


class TestCrossingRatio:
    def test_strong_positive_control_pushes_paths_across(self):
        """A constant +10 control on the double well sends essentially all
        paths from -1 to the positive well by the terminal time."""
        bundle = double_well(dim=1, dt=0.01)
        push = TimeVaryingConstantControl(dim=1,
                                          coefficient=lambda t: np.array([10.0]))
        ratio = crossing_ratio(bundle.model, push, bundle.grid,
                               n_paths=2000, seed=6)
        assert ratio >= 0.99

    def test_uncontrolled_double_well_rarely_crosses(self):
        bundle = double_well(dim=1, dt=0.01)
        ratio = crossing_ratio(bundle.model, ZeroControl(1), bundle.grid,
                               n_paths=2000, seed=6)
        assert ratio < 0.05

    def test_multiple_coordinates_require_all_positive(self):
        push = TimeVaryingConstantControl(dim=2,
                                          coefficient=lambda t: np.array([10.0, -10.0]))
        both = crossing_ratio(flat_model(dim=2), push, GRID,
                              n_paths=200, seed=7, coords=(0, 1))
        first = crossing_ratio(flat_model(dim=2), push, GRID,
                               n_paths=200, seed=7, coords=(0,))
        assert both == 0.0
        assert first == 1.0

    def test_empty_coords_rejected(self):
        with pytest.raises(ValueError, match="coordinate"):
            crossing_ratio(flat_model(), ZeroControl(1), GRID,
                           n_paths=8, seed=0, coords=())


class TestRobustnessStudy:
    def make_study(self, estimates_by_key):
        rows = [StudyRow(kind, copies, rep, est)
                for (kind, copies), vals in estimates_by_key.items()
                for rep, est in enumerate(vals)]
        return RobustnessStudy(rows=rows, n_paths=10)

    def test_relative_error_is_std_over_mean(self):
        study = self.make_study({("log_variance", 1): [2.0, 4.0]})
        expected = np.std([2.0, 4.0], ddof=1) / 3.0
        assert_allclose(study.relative_error("log_variance", 1), expected)

    def test_any_saturated_replication_forces_inf(self):
        study = self.make_study({("variance", 8): [1.0, float("inf"), 2.0]})
        assert study.relative_error("variance", 8) == float("inf")

    def test_too_few_replications_rejected(self):
        study = self.make_study({("variance", 8): [1.0]})
        with pytest.raises(ValueError, match="replications"):
            study.relative_error("variance", 8)

    def test_estimates_filters_by_kind_and_copies(self):
        study = self.make_study({("variance", 1): [1.0, 2.0],
                                 ("variance", 8): [3.0, 4.0]})
        assert_allclose(study.estimates("variance", 8), [3.0, 4.0])


class TestTensorisationStudy:
    def test_row_count_and_determinism(self):
        model = flat_model()
        kwargs = dict(base_free_energy=0.0, m_values=(1, 4), n_paths=32,
                      reps=3, seed=11, grid=TimeGrid.from_horizon(1.0, 0.25))
        a = tensorisation_study(model, **kwargs)
        b = tensorisation_study(model, **kwargs)
        assert len(a.rows) == 2 * 3 * 3
        assert a.rows == b.rows

    def test_log_variance_estimate_grows_linearly_in_copies(self):
        """W over M independent copies has variance M times the base
        variance, so the sample estimate should scale accordingly."""
        def g(x):
            return tp.dot(x, np.ones(1))

        base = flat_model()
        model = SdeModel(dim=1, drift=base.drift, sigma=base.sigma,
                         running_cost=base.running_cost, terminal_cost=g,
                         horizon=1.0, x_init=np.zeros(1))
        study = tensorisation_study(model, base_free_energy=0.0,
                                    m_values=(1, 16), n_paths=4000, reps=2,
                                    seed=13, grid=TimeGrid.from_horizon(1.0, 0.25))
        v1 = study.estimates("log_variance", 1).mean()
        v16 = study.estimates("log_variance", 16).mean()
        assert 12.0 < v16 / v1 < 20.0

    def test_variance_kind_saturates_before_cross_entropy(self):
        """An inflated free-energy input drives the plain variance estimate
        past its overflow guard while the cross-entropy one stays finite."""
        study = tensorisation_study(flat_model(), base_free_energy=400.0,
                                    m_values=(1,), n_paths=16, reps=2, seed=1,
                                    grid=TimeGrid.from_horizon(1.0, 0.5))
        assert study.relative_error("variance", 1) == float("inf")
        assert np.isfinite(study.estimates("cross_entropy", 1)).all()
        assert np.isfinite(study.estimates("log_variance", 1)).all()

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown study kind"):
            tensorisation_study(flat_model(), base_free_energy=0.0,
                                m_values=(1,), n_paths=8, reps=2, seed=0,
                                grid=GRID, kinds=("entropy",))


class TestGradientVarianceDiag:
    def test_report_shapes_and_reproducibility(self):
        bundle = ou_linear(dim=1, dt=0.25)
        control = init(bundle.arch, seed=8)
        spec = LossSpec(kind="relative_entropy")
        a = gradient_variance_diag(bundle.model, control, spec, bundle.grid,
                                   n_paths=16, reps=3, seed=21)
        b = gradient_variance_diag(bundle.model, control, spec, bundle.grid,
                                   n_paths=16, reps=3, seed=21)
        assert a.component_mean.shape == (control.n_params,)
        assert a.component_var.shape == (control.n_params,)
        assert a.reps == 3 and a.n_paths == 16
        assert 0 < a.n_used <= control.n_params
        assert np.isfinite(a.relative_spread)
        assert_allclose(a.component_mean, b.component_mean, rtol=0)

    def test_floor_excludes_small_components(self):
        bundle = ou_linear(dim=1, dt=0.25)
        control = init(bundle.arch, seed=8)
        spec = LossSpec(kind="relative_entropy")
        report = gradient_variance_diag(bundle.model, control, spec,
                                        bundle.grid, n_paths=16, reps=2,
                                        seed=21, floor=1e9)
        assert report.n_used == 0
        assert np.isnan(report.relative_spread)

    def test_single_replication_rejected(self):
        bundle = ou_linear(dim=1, dt=0.25)
        control = init(bundle.arch, seed=8)
        with pytest.raises(ValueError, match="replications"):
            gradient_variance_diag(bundle.model, control,
                                   LossSpec(kind="relative_entropy"),
                                   bundle.grid, n_paths=8, reps=1, seed=0)


class TestMovingAverage:
    def test_trailing_window_averages_what_exists(self):
        out = moving_average([1.0, 2.0, 3.0, 4.0], window=2)
        assert_allclose(out, [1.0, 1.5, 2.5, 3.5])

    def test_window_one_is_identity(self):
        vals = [3.0, -1.0, 2.5]
        assert_allclose(moving_average(vals, window=1), vals)

    def test_nonpositive_window_rejected(self):
        with pytest.raises(ValueError, match="window"):
            moving_average([1.0], window=0)
