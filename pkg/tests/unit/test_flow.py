"""Unit tests for the flow solver and the rescaled process."""
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from src.families import build_system
from src.flow import (rescaled_batch, rescaled_frame, rescaled_solution, solve_anticipating,
                      solve_flow, solve_flow_batch, window_of)
from src.initial_conditions import InitialConditionSpec
from src.utils.errors import BlowUpError, ParameterRangeError, ScaleDomainError, ScaleHorizonError
from src.wiener import build_grid, coarsen, phi, sample_path, sample_paths


def test_brownian_flow_reproduces_the_path(brownian, small_grid):
    path = sample_path(small_grid, 1, 3)
    flow = solve_flow(brownian, path, [0.0], small_grid.horizon)
    np.testing.assert_array_equal(flow.values, path.values)
    assert flow.scheme == "heun"


def test_additive_noise_with_offset(brownian, small_grid):
    path = sample_path(small_grid, 1, 3)
    flow = solve_flow(brownian, path, [2.5], 64.0)
    end = small_grid.index_of(64.0)
    np.testing.assert_allclose(flow.values, 2.5 + path.values[:end + 1], atol=1e-12)
    assert flow.times[-1] == 64.0


def test_restart_from_a_grid_time_continues_the_flow(radial, small_grid):
    path = sample_path(small_grid, 1, 8)
    full = solve_flow(radial, path, [1.0], 256.0)
    t0 = 16.0
    k = small_grid.index_of(t0)
    tail = solve_flow(radial, path, full.values[k], 256.0, t0=t0)
    np.testing.assert_allclose(tail.values, full.values[k:], rtol=1e-12, atol=1e-12)
    assert tail.times[0] == t0


def test_batch_matches_single_solves(radial, small_grid):
    paths = sample_paths(small_grid, 1, [0, 1, 2])
    x0s = np.array([[0.5], [1.0], [-2.0]])
    batch = solve_flow_batch(radial, paths, x0s, 512.0)
    assert batch.values.shape[0] == 3
    for b, p in enumerate(paths):
        single = solve_flow(radial, p, x0s[b], 512.0)
        np.testing.assert_allclose(batch.values[b], single.values, rtol=1e-13, atol=1e-13)


class TestStratonovich:
    def test_geometric_matches_closed_form(self):
        system = build_system({"preset": "geometric"})
        grid = build_grid(2.0, 1, 1e-4)
        paths = sample_paths(grid, 1, range(20))
        flow = solve_flow_batch(system, paths, np.ones((20, 1)), 1.0)
        exact = np.exp(np.stack([p.values[:flow.times.shape[0]] for p in paths]))
        errors = np.max(np.abs(flow.values - exact), axis=(1, 2))
        assert np.all(errors <= 1e-2)

    def test_ito_euler_uses_the_corrected_drift(self):
        system = build_system({"preset": "geometric"})
        grid = build_grid(2.0, 1, 1e-4)
        paths = sample_paths(grid, 1, range(20))
        flow = solve_flow_batch(system, paths, np.ones((20, 1)), 1.0, scheme="ito_euler")
        exact = np.exp(np.array([p.value_at(1.0) for p in paths]))
        rel = np.abs(flow.end - exact) / exact
        assert np.median(rel) < 0.05

    def test_schemes_close_in_as_the_grid_refines(self):
        system = build_system({"preset": "geometric"})
        fine = sample_paths(build_grid(2.0, 1, 1e-4), 1, range(20))
        coarse = [coarsen(p, 10) for p in fine]

        def gap(paths):
            x0s = np.ones((len(paths), 1))
            heun = solve_flow_batch(system, paths, x0s, 1.0)
            euler = solve_flow_batch(system, paths, x0s, 1.0, scheme="ito_euler")
            return np.max(np.abs(heun.values - euler.values), axis=(1, 2))

        # strong order 1/2 would shrink the gap by sqrt(10)
        assert np.median(gap(fine)) <= 0.5 * np.median(gap(coarse))


class TestErrors:
    def test_blow_up_names_time_and_seed(self, small_grid):
        system = build_system({"dim": 1, "drift": {"family": "linear", "scale": 50.0},
                               "diffusion": [{"family": "zero"}]})
        with pytest.raises(BlowUpError) as exc:
            solve_flow(system, sample_path(small_grid, 1, 9), [1.0], 4.0)
        assert exc.value.seed == 9
        assert 0.4 < exc.value.time < 0.7
        assert exc.value.exit_code == 4

    def test_blow_up_in_a_batch_names_the_offending_row(self, small_grid):
        system = build_system({"dim": 1, "drift": {"family": "linear", "scale": 50.0},
                               "diffusion": [{"family": "zero"}]})
        paths = sample_paths(small_grid, 1, [4, 5])
        with pytest.raises(BlowUpError) as exc:
            solve_flow_batch(system, paths, np.array([[0.0], [1.0]]), 4.0)
        assert exc.value.seed == 5

    def test_validation(self, brownian, small_grid):
        path = sample_path(small_grid, 1, 0)
        with pytest.raises(ParameterRangeError):
            solve_flow(brownian, path, [0.0, 1.0], 4.0)
        with pytest.raises(ScaleHorizonError):
            solve_flow(brownian, path, [0.0], small_grid.horizon * 2)
        with pytest.raises(ParameterRangeError):
            solve_flow(brownian, path, [0.0], 4.0, scheme="milstein")
        with pytest.raises(ParameterRangeError):
            solve_flow(brownian, path, [0.0], 4.0, t0=8.0)


def test_anticipating_endpoint_initial_condition(brownian, small_grid):
    path = sample_path(small_grid, 1, 6)
    init = InitialConditionSpec(kind="endpoint")
    flow = solve_anticipating(brownian, path, init, 32.0)
    w1 = path.value_at(1.0)
    np.testing.assert_allclose(flow.values[0], w1)
    np.testing.assert_allclose(flow.end, w1 + path.value_at(32.0), atol=1e-12)


def test_running_max_start_with_zero_noise_solves_the_ode():
    system = build_system({"dim": 1, "drift": {"family": "sine"}, "diffusion": [{"family": "zero"}]})
    path = sample_path(build_grid(2.0, 2, 1e-3), 1, 11)
    flow = solve_anticipating(system, path, InitialConditionSpec(kind="running_max"), 4.0)
    x0 = float(np.max(path.values[:path.grid.window_start[1] + 1, 0]))
    assert flow.values[0, 0] == x0
    oracle = solve_ivp(lambda t, x: np.sin(x), (0.0, 4.0), [x0], method="DOP853",
                       rtol=1e-12, atol=1e-12, dense_output=True)
    np.testing.assert_allclose(flow.values[:, 0], oracle.sol(flow.times)[0], atol=1e-4)


class TestRescaled:
    def test_identity_route_is_the_scaled_path(self, brownian, small_grid):
        path = sample_path(small_grid, 1, 2)
        u = 2.0 ** 10
        xi = rescaled_solution(brownian, path, InitialConditionSpec(), u, m=128)
        assert xi.m == 128
        t = np.linspace(0.0, 1.0, 129)
        np.testing.assert_allclose(xi.values, path.value_at(u * t) / phi(u), atol=1e-12)

    def test_rejects_scales_below_e(self, brownian, small_grid):
        path = sample_path(small_grid, 1, 2)
        with pytest.raises(ScaleDomainError, match="u > e"):
            rescaled_solution(brownian, path, InitialConditionSpec(), 2.0)
        with pytest.raises(ScaleHorizonError):
            rescaled_solution(brownian, path, InitialConditionSpec(), small_grid.horizon * 4)

    def test_unknown_route(self, brownian, small_grid):
        with pytest.raises(ParameterRangeError):
            rescaled_solution(brownian, sample_path(small_grid, 1, 0), InitialConditionSpec(), 64.0,
                              route="sideways")

    def test_routes_agree_on_a_coarse_grid(self, radial):
        grid = build_grid(2.0, 10, 1e-2)
        init = InitialConditionSpec(point=(1.0,))
        for seed in (0, 1):
            path = sample_path(grid, 1, seed)
            a = rescaled_solution(radial, path, init, 2.0 ** 10, route="identity")
            b = rescaled_solution(radial, path, init, 2.0 ** 10, route="direct")
            assert a.distance(b) <= 0.05

    @pytest.mark.slow
    def test_routes_agree_at_fine_resolution(self, radial):
        grid = build_grid(2.0, 10, 1e-3)
        init = InitialConditionSpec(point=(1.0,))
        for seed in range(10):
            path = sample_path(grid, 1, seed)
            a = rescaled_solution(radial, path, init, 2.0 ** 10, route="identity")
            b = rescaled_solution(radial, path, init, 2.0 ** 10, route="direct")
            assert a.distance(b) <= 0.05

    def test_batch_extraction_matches_single_scale(self, radial, small_grid):
        path = sample_path(small_grid, 1, 4)
        init = InitialConditionSpec(point=(0.5,))
        flow = solve_flow(radial, path, [0.5], small_grid.horizon)
        scales = [2.0 ** 6, 2.0 ** 9, 2.0 ** 12]
        batch = rescaled_batch(flow, scales, 64)
        assert batch.shape == (3, 65, 1)
        single = rescaled_solution(radial, path, init, 2.0 ** 9, m=64)
        np.testing.assert_allclose(batch[1], single.values, rtol=1e-12, atol=1e-12)
        with pytest.raises(ParameterRangeError):
            rescaled_batch(solve_flow(radial, path, [0.5], 64.0), [128.0], 64)

    def test_frame(self, brownian, small_grid):
        xi = rescaled_solution(brownian, sample_path(small_grid, 1, 0), InitialConditionSpec(), 64.0, m=32)
        frame = rescaled_frame(xi, 64.0)
        assert list(frame.columns) == ["u", "t", "xi_1"]
        assert len(frame) == 33


@pytest.mark.parametrize("t,expected", [(0.5, 0), (1.0, 0), (1.5, 1), (2.0, 1), (2.0001, 2), (1024.0, 10)])
def test_window_of(t, expected):
    assert window_of(t, 2.0) == expected


def test_flow_frame(brownian, small_grid):
    flow = solve_flow(brownian, sample_path(small_grid, 1, 0), [0.0], 2.0)
    frame = flow.to_frame()
    assert list(frame.columns) == ["t", "X_1"]
    assert math.isclose(frame["t"].iloc[-1], 2.0)
