"""Unit tests for the rate function, the distance search and the radius bound."""
import math

import numpy as np
import pytest

from src.families import build_system
from src.paths import SamplePath, uniform_times
from src.rate import (DistOptions, RateOptions, _DistanceObjective, dist_to_limit_set,
                      dist_to_limit_set_batch, limit_set_radius, pseudo_inverse_control,
                      rate_exact_full_rank, rate_variational)
from src.skeleton import Control, integrate_skeleton
from src.utils.errors import ParameterRangeError, RankDeficiencyError, UnboundedFieldsError

FAST = DistOptions(random_starts=2, max_iter=200)


@pytest.fixture
def two_noise():
    return build_system({"dim": 1, "drift": {"family": "zero"},
                         "diffusion": [{"family": "constant", "value": [1.0]},
                                       {"family": "constant", "value": [1.0]}]})


class TestDistance:
    def test_straight_line_at_twice_the_slope(self, brownian):
        query = dist_to_limit_set(brownian, SamplePath.linear([2.0], 64), m=64, opts=FAST)
        assert 2.0 - math.sqrt(2.0) - 1e-6 <= query.distance <= 0.5958
        assert query.to_record()["energy"] <= 1.0 + 1e-9
        assert query.path.m == 256

    def test_paths_inside_the_level_set_are_close(self, brownian):
        query = dist_to_limit_set(brownian, SamplePath.linear([1.0], 64), m=64, opts=FAST)
        assert query.distance < 0.02

    def test_warm_start_at_the_optimum_is_kept(self, brownian):
        target = SamplePath.linear([1.0], 64).values[None]
        warm = Control.constant(16, [1.0]).values[None]
        batch = dist_to_limit_set_batch(brownian, target, m=16, opts=FAST, warm_starts=warm)
        assert batch.distances[0] <= 1e-12

    def test_batch_matches_single_queries(self, radial):
        targets = np.stack([SamplePath.linear([s], 32).values for s in (0.5, -1.5)])
        batch = dist_to_limit_set_batch(radial, targets, m=8, opts=FAST, x0=[0.5])
        for p, slope in enumerate((0.5, -1.5)):
            single = dist_to_limit_set(radial, SamplePath.linear([slope], 32), m=8, opts=FAST, x0=[0.5])
            assert batch.distances[p] == pytest.approx(single.distance, abs=1e-9)

    def test_zero_system_distance_is_the_sup_norm(self, zero_system):
        xi = SamplePath.from_function(lambda s: [np.sin(3 * s)], 64)
        query = dist_to_limit_set(zero_system, xi, m=16, opts=FAST)
        assert query.distance == pytest.approx(np.abs(xi.values).max(), abs=1e-12)

    def test_rejects_bad_targets(self, brownian):
        with pytest.raises(ParameterRangeError):
            dist_to_limit_set_batch(brownian, np.full((1, 9, 1), np.nan), m=8)
        with pytest.raises(ParameterRangeError):
            dist_to_limit_set_batch(brownian, np.zeros((9, 1)), m=8)

    def test_options_ignore_foreign_keys(self):
        opts = DistOptions.from_config({"cap": 2.0, "betas": [1, 10], "m": 32})
        assert opts.cap == 2.0 and opts.betas == (1.0, 10.0)

    def test_rate_stages_must_pair_up(self):
        with pytest.raises(ParameterRangeError, match="one entry per stage"):
            RateOptions.from_config({"penalties": [1.0], "betas": [10, 100]})


def test_smoothed_objective_gradient_matches_finite_differences():
    fields = build_system({"dim": 1, "drift": {"family": "sine", "amplitude": 0.2},
                           "diffusion": [{"family": "tanh", "amplitude": 1.2}]})
    rng = np.random.default_rng(7)
    m, substeps = 4, 2
    targets = rng.normal(size=(1, m * substeps + 1, 1))
    objective = _DistanceObjective(fields, targets, np.array([0.3]), substeps, 1e-6)
    problem = np.zeros(1, dtype=int)
    for _ in range(3):
        theta = rng.normal(size=(1, m, 1))
        _, _, grad = objective.evaluate(theta, problem, 10.0, grad=True)
        fd = np.zeros_like(theta)
        eps = 1e-6
        for idx in np.ndindex(theta.shape):
            up, down = theta.copy(), theta.copy()
            up[idx] += eps
            down[idx] -= eps
            fd[idx] = (objective.evaluate(up, problem, 10.0)[0][0]
                       - objective.evaluate(down, problem, 10.0)[0][0]) / (2 * eps)
        assert np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12) <= 1e-4


class TestRate:
    @pytest.mark.parametrize("fixture,x0,slope", [("brownian", [0.0], 1.0),
                                                  ("two_noise", [0.0], 1.0),
                                                  ("radial", [1.0], 1.0)])
    def test_exact_and_variational_agree(self, request, fixture, x0, slope):
        fields = request.getfixturevalue(fixture)
        g = SamplePath.linear([slope], 64, offset=x0)
        exact = rate_exact_full_rank(fields, g, x0=x0)
        variational = rate_variational(fields, g, m=64, opts=RateOptions(random_starts=2), x0=x0)
        assert exact.is_finite and variational.is_finite
        assert variational.value == pytest.approx(exact.value, rel=5e-3)

    def test_closed_form_values(self, brownian, two_noise):
        g = SamplePath.linear([1.0], 64)
        assert rate_exact_full_rank(brownian, g).value == pytest.approx(0.5)
        # the least-norm split is (1/2, 1/2)
        assert rate_exact_full_rank(two_noise, g).value == pytest.approx(0.25)

    def test_variational_control_is_an_upper_bound(self, radial):
        g = SamplePath.linear([1.0], 64, offset=[1.0])
        opts = RateOptions(random_starts=2)
        result = rate_variational(radial, g, m=64, opts=opts, x0=[1.0])
        replay = integrate_skeleton(radial, result.control, x0=[1.0], substeps=opts.substeps)
        assert replay.resample(64).distance(g) <= 10 * opts.tol
        assert result.value == pytest.approx(result.control.energy)

    def test_start_mismatch_is_infinite(self, brownian):
        g = SamplePath.linear([1.0], 64, offset=[1.0])
        assert rate_exact_full_rank(brownian, g).value == math.inf
        result = rate_variational(brownian, g, m=64)
        assert result.value == math.inf and not result.is_finite
        assert result.to_record()["method"] == "variational"

    def test_variational_needs_enough_cells(self, brownian):
        with pytest.raises(ParameterRangeError):
            rate_variational(brownian, SamplePath.linear([1.0], 64), m=4)

    def test_rank_deficiency(self):
        fields = build_system({"dim": 2, "diffusion": [{"family": "constant", "value": [1.0, 0.0]}]})
        with pytest.raises(RankDeficiencyError) as exc:
            pseudo_inverse_control(fields, SamplePath.linear([1.0, 1.0], 8).values)
        assert exc.value.exit_code == 4

    def test_vanishing_diffusion_is_rank_deficient(self):
        fields = build_system({"dim": 1, "diffusion": [{"family": "tanh"}]})
        with pytest.raises(RankDeficiencyError):
            pseudo_inverse_control(fields, np.zeros((17, 1)))

    def test_pseudo_inverse_of_a_constant_field(self, brownian):
        values = SamplePath.linear([3.0], 16).values
        np.testing.assert_allclose(pseudo_inverse_control(brownian, values), 3.0, rtol=1e-8)
        assert uniform_times(16).shape == (17,)


class TestRadius:
    def test_brownian(self, brownian):
        assert limit_set_radius(brownian) == pytest.approx(math.sqrt(2.0))
        assert limit_set_radius(brownian, cap=2.0) == pytest.approx(2.0)

    def test_constant_fields_use_the_operator_norm(self, two_noise):
        assert limit_set_radius(two_noise) == pytest.approx(2.0)
        plane = build_system({"dim": 2, "drift": {"family": "zero"},
                              "diffusion": [{"family": "constant", "value": [1.0, 0.0]},
                                            {"family": "constant", "value": [0.0, 1.0]}]})
        assert limit_set_radius(plane) == pytest.approx(math.sqrt(2.0))

    def test_constant_drift_adds_its_norm(self):
        drifting = build_system({"dim": 1, "drift": {"family": "constant", "value": [0.5]},
                                 "diffusion": [{"family": "zero"}]})
        assert limit_set_radius(drifting) == pytest.approx(0.5)

    def test_nonconstant_fields_give_an_upper_bound(self):
        tanh_plane = build_system({"dim": 2, "drift": {"family": "zero"},
                                   "diffusion": [{"family": "tanh"}, {"family": "tanh"}]})
        # each tanh field is bounded by sqrt(2), so the radius uses sqrt(2 + 2)
        assert limit_set_radius(tanh_plane) == pytest.approx(math.sqrt(2.0) * 2.0)

    def test_distances_never_exceed_the_radius_bound(self, brownian):
        radius = limit_set_radius(brownian)
        query = dist_to_limit_set(brownian, SamplePath.linear([5.0], 32), m=16, opts=FAST)
        assert np.abs(query.path.values).max() <= radius + 1e-9

    def test_unbounded_fields(self):
        with pytest.raises(UnboundedFieldsError):
            limit_set_radius(build_system({"preset": "geometric"}))


def test_rate_is_quadratic_in_the_path():
    fields = build_system({"dim": 1, "drift": {"family": "zero"},
                           "diffusion": [{"family": "constant", "value": [1.5]}]})
    mid = (np.arange(16) + 0.5) / 16
    g = integrate_skeleton(fields, Control(0.4 * np.cos(2 * np.pi * mid)[:, None]))
    opts = RateOptions(random_starts=2)
    single = rate_variational(fields, g, m=16, opts=opts)
    double = rate_variational(fields, g.scaled(2.0), m=16, opts=opts)
    assert single.converged and double.converged
    assert double.value / single.value == pytest.approx(4.0, rel=1e-2)


@pytest.mark.parametrize("shape", [lambda s: [0.8 * np.sin(2 * s)], lambda s: [s * s]])
def test_paths_with_rate_below_one_lie_in_the_level_set(brownian, shape):
    xi = SamplePath.from_function(shape, 256)
    rate = rate_variational(brownian, xi, m=32, opts=RateOptions(random_starts=2))
    assert rate.value <= 1.0 - 1e-2
    query = dist_to_limit_set(brownian, xi, m=32, opts=DistOptions(random_starts=2, max_iter=500))
    assert query.distance <= 1e-2


@pytest.mark.slow
@pytest.mark.parametrize("fixture", ["brownian", "two_noise"])
def test_rate_never_exceeds_the_energy_of_a_known_control(request, fixture):
    fields = request.getfixturevalue(fixture)
    rng = np.random.default_rng(2024)
    for _ in range(10):
        z = rng.normal(size=(16, fields.noise_dim))
        target = rng.uniform(0.1, 2.0)
        control = Control(z * math.sqrt(target / Control(z).energy))
        g = integrate_skeleton(fields, control)
        result = rate_variational(fields, g, m=16, opts=RateOptions(random_starts=2))
        assert result.value <= control.energy + 1e-3
