"""Unit tests for the coefficient family registry and system presets."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from src.families import PRESETS, available_families, build_field, build_system
from src.utils.errors import ConfigError, ParameterRangeError, UnknownFamilyError


def test_registry_lists_families():
    names = available_families()
    for name in ("zero", "constant", "linear", "sine", "tanh", "sign", "radial_saturating"):
        assert name in names


def test_unknown_family_is_a_config_error():
    with pytest.raises(UnknownFamilyError) as exc:
        build_field({"family": "cosh"}, 1)
    assert exc.value.exit_code == 2
    assert "cosh" in str(exc.value)


def test_bad_family_parameters():
    with pytest.raises(ConfigError):
        build_field({"family": "tanh", "slope": 2.0}, 1)
    with pytest.raises(ConfigError):
        build_field({"amplitude": 2.0}, 1)
    with pytest.raises(ConfigError):
        build_field({"family": "constant", "value": [1.0, 2.0, 3.0]}, 2)


def test_field_values_are_vectorized():
    x = np.linspace(-2, 2, 9)[:, None]
    assert build_field({"family": "zero"}, 1)(x).shape == (9, 1)
    np.testing.assert_allclose(build_field({"family": "constant", "value": 3.0}, 1)(x), 3.0)
    np.testing.assert_allclose(build_field({"family": "tanh", "amplitude": 2.0}, 1)(x), 2 * np.tanh(x))
    np.testing.assert_allclose(build_field({"family": "sine", "frequency": 3.0}, 1)(x), np.sin(3 * x))


def test_sign_is_one_sided_at_zero():
    sign = build_field({"family": "sign"}, 2)
    np.testing.assert_array_equal(sign(np.array([[0.0, -0.0], [-1.0, 2.0]])), [[1.0, 1.0], [-1.0, 1.0]])


def test_linear_field_matrix():
    field = build_field({"family": "linear", "matrix": [[0.0, 1.0], [-1.0, 0.0]]}, 2)
    np.testing.assert_allclose(field(np.array([2.0, 3.0])), [3.0, -2.0])
    assert field.bound is None
    assert build_field({"family": "linear", "scale": 0.0}, 2).bound == 0.0


def test_radial_saturating_tends_to_its_direction():
    field = build_field({"family": "radial_saturating", "direction": [1.0, 0.0]}, 2)
    far = field(np.array([1e9, 0.0]))
    np.testing.assert_allclose(far, [1.0, 0.0], atol=1e-8)
    np.testing.assert_allclose(field(np.zeros(2)), [0.0, 0.0])
    np.testing.assert_allclose(field.jacobian(np.zeros(2)), np.zeros((2, 2)))


def test_declared_bounds_hold_on_samples(rng):
    x = rng.normal(scale=10.0, size=(500, 2))
    for spec in ({"family": "sine", "amplitude": 2.0}, {"family": "tanh"}, {"family": "sign"},
                 {"family": "constant", "value": [3.0, 4.0]},
                 {"family": "radial_saturating", "direction": [1.0, 1.0]}):
        field = build_field(spec, 2)
        assert np.all(np.linalg.norm(field(x), axis=-1) <= field.bound + 1e-12), spec["family"]


@given(arrays(np.float64, (4, 2), elements=st.floats(min_value=-3.0, max_value=3.0)))
@settings(max_examples=40, deadline=None)
def test_analytic_jacobians_match_finite_differences(x):
    for spec in ({"family": "sine", "amplitude": 1.5, "frequency": 0.7},
                 {"family": "tanh", "amplitude": 2.0},
                 {"family": "linear", "matrix": [[1.0, 2.0], [0.5, -1.0]]}):
        field = build_field(spec, 2)
        np.testing.assert_allclose(field.jacobian(x), field.fd_jacobian(x), atol=1e-6, rtol=1e-5)


@given(arrays(np.float64, (3, 2), elements=st.floats(min_value=0.1, max_value=5.0)))
@settings(max_examples=40, deadline=None)
def test_radial_jacobian_away_from_origin(x):
    field = build_field({"family": "radial_saturating", "direction": [0.3, -1.0]}, 2)
    np.testing.assert_allclose(field.jacobian(x), field.fd_jacobian(x), atol=1e-6, rtol=1e-5)


class TestBuildSystem:
    def test_presets(self):
        for name in PRESETS:
            system = build_system({"preset": name})
            assert system.name == name
            assert system.dim == 1 and system.noise_dim == 1
        assert build_system({"preset": "brownian"}).limit is not None
        assert build_system({"preset": "geometric"}).limit is None

    def test_unknown_preset(self):
        with pytest.raises(UnknownFamilyError):
            build_system({"preset": "levy"})

    def test_preset_rejects_extra_keys(self):
        with pytest.raises(ConfigError):
            build_system({"preset": "brownian", "dim": 2})

    def test_explicit_declaration(self):
        system = build_system({
            "dim": 2,
            "drift": {"family": "tanh"},
            "diffusion": [{"family": "constant", "value": [1.0, 0.0]},
                          {"family": "sine"}],
            "limit": {"diffusion": [{"family": "constant", "value": [1.0, 0.0]},
                                    {"family": "zero"}]},
        })
        assert system.dim == 2 and system.noise_dim == 2
        x = np.zeros((5, 2))
        assert system.diffusion_at(x).shape == (5, 2, 2)
        assert system.diffusion_jacobians_at(x).shape == (5, 2, 2, 2)
        assert system.limit.drift.name == "zero"

    def test_limit_override_replaces_declared_limit(self):
        system = build_system({"preset": "radial"},
                              {"diffusion": [{"family": "constant", "value": [2.0]}]})
        np.testing.assert_allclose(system.limit.diffusion[0](np.zeros(1)), [2.0])

    def test_unknown_keys_and_missing_keys(self):
        with pytest.raises(ConfigError):
            build_system({"dim": 1, "diffusion": [{"family": "zero"}], "colour": "red"})
        with pytest.raises(ConfigError):
            build_system({"dim": 1})
        with pytest.raises(ConfigError):
            build_system({"preset": "brownian"}, {"drift": {"family": "zero"}})

    def test_limit_must_match_dimensions(self):
        with pytest.raises(ParameterRangeError):
            build_system({"dim": 1, "diffusion": [{"family": "zero"}],
                          "limit": {"diffusion": [{"family": "zero"}, {"family": "zero"}]}})
