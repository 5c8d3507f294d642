"""Built-in problem bundles: shapes, reproducibility, drift behaviour."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from driftopt.approx import DenseNet, FeedForwardNet, TimeIndexedLinear, ZeroControl
from driftopt.presets import PRESET_NAMES, double_well, make_preset, ou_linear, ou_quadratic
from driftopt.reference import RiccatiSolution
from driftopt.sde import simulate


class TestOuLinear:
    def test_problem_matrices_are_reproducible_per_seed(self):
        a = ou_linear(dim=3, problem_seed=17)
        b = ou_linear(dim=3, problem_seed=17)
        c = ou_linear(dim=3, problem_seed=18)
        assert_allclose(a.problem.A, b.problem.A, rtol=0)
        assert_allclose(a.problem.B, b.problem.B, rtol=0)
        assert not np.allclose(a.problem.A, c.problem.A)

    def test_matrices_are_perturbed_identities(self):
        bundle = ou_linear(dim=4, nu=0.1, problem_seed=0)
        assert np.abs(bundle.problem.A + np.eye(4)).max() < 0.5
        assert np.abs(bundle.problem.B - np.eye(4)).max() < 0.5

    def test_bundle_carries_reference_and_free_energy(self):
        bundle = ou_linear(dim=2)
        assert isinstance(bundle.minus_log_z, float)
        assert bundle.reference_control is not None
        assert isinstance(bundle.arch, DenseNet)
        assert bundle.grid.steps == 100

    def test_model_runs_under_zero_control(self):
        bundle = ou_linear(dim=2, dt=0.25)
        batch = simulate(bundle.model, ZeroControl(2), bundle.grid, 5, seed=0)
        assert batch.states.shape == (5, 5, 2)

    def test_defaults_name_the_training_knobs(self):
        bundle = ou_linear(dim=1)
        assert set(bundle.defaults) == {"loss", "optimizer", "eta",
                                        "n_paths", "iterations"}


class TestOuQuadratic:
    def test_architecture_is_one_gain_per_step(self):
        bundle = ou_quadratic(dim=3, dt=0.25)
        assert isinstance(bundle.arch, TimeIndexedLinear)
        assert bundle.arch.steps == 4

    def test_problem_is_a_riccati_solution(self):
        bundle = ou_quadratic(dim=2, dt=0.25)
        assert isinstance(bundle.problem, RiccatiSolution)
        f = bundle.problem.F_at(1.0)
        assert_allclose(f, np.eye(2), rtol=0, atol=1e-14)

    def test_running_cost_is_half_x_squared(self):
        bundle = ou_quadratic(dim=2, dt=0.25)
        x = np.array([[1.0, 2.0], [0.0, -3.0]])
        assert_allclose(bundle.model.running_cost(x, 0.0), [2.5, 4.5],
                        rtol=1e-14)

    def test_random_start_draws_rows_per_path(self):
        bundle = ou_quadratic(dim=2, dt=0.25, random_start=True)
        gen = np.random.default_rng(0)
        starts = bundle.model.x_init(gen, 7)
        assert starts.shape == (7, 2)
        assert np.std(starts) > 0.1


class TestDoubleWell:
    def test_drift_points_back_toward_the_wells(self):
        """The restoring force is positive between the wells (pushes right
        from the saddle side at x < 0 toward -1) and negative past +1."""
        bundle = double_well(dim=1)
        drift = bundle.model.drift
        assert drift(np.array([[-0.5]]), 0.0)[0, 0] < 0.0
        assert drift(np.array([[0.5]]), 0.0)[0, 0] > 0.0
        assert drift(np.array([[1.5]]), 0.0)[0, 0] < 0.0
        assert drift(np.array([[-1.0]]), 0.0)[0, 0] == 0.0

    def test_high_dimensional_weights_split_three_heavy_rest_unit(self):
        bundle = double_well(dim=10)
        x = np.full((1, 10), 0.5)
        force = bundle.model.drift(x, 0.0)[0]
        assert_allclose(force[:3], np.full(3, 7.5), rtol=1e-14)
        assert_allclose(force[3:], np.full(7, 1.5), rtol=1e-14)
        g = bundle.model.terminal_cost(np.zeros((1, 10)))
        assert_allclose(g, [3 * 3.0 + 7 * 1.0], rtol=1e-14)

    def test_paths_start_in_the_left_well(self):
        bundle = double_well(dim=2, dt=0.25)
        assert_allclose(bundle.model.x_init, -np.ones(2), rtol=0)

    def test_architecture_matches_the_dimension(self):
        bundle = double_well(dim=4)
        assert isinstance(bundle.arch, FeedForwardNet)
        assert bundle.arch.widths[0] == 5
        assert bundle.arch.widths[-1] == 4


class TestMakePreset:
    def test_dispatches_by_name(self):
        for name in PRESET_NAMES:
            kwargs = {"dt": 0.25} if name != "ou_quadratic" else {"dt": 0.25, "dim": 2}
            bundle = make_preset(name, **kwargs)
            assert bundle.name == name

    def test_unknown_name_lists_the_choices(self):
        with pytest.raises(ValueError, match="ou_linear"):
            make_preset("triple_well")

    def test_kwargs_reach_the_factory(self):
        bundle = make_preset("ou_linear", dim=3, dt=0.5)
        assert bundle.model.dim == 3
        assert bundle.grid.steps == 2
