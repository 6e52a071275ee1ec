"""
Registry of named coefficient families and system presets.

Every family is vectorized over stacked points (..., d) and declares its
sup-norm bound (None for unbounded families).
"""
import logging
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from .coefficients import CoefficientSystem, LimitSystem, VectorField
from .utils.errors import ConfigError, UnknownFamilyError

logger = logging.getLogger(__name__)

FieldFactory = Callable[..., VectorField]
_REGISTRY: Dict[str, FieldFactory] = {}


def register(name: str):
    def decorator(factory: FieldFactory) -> FieldFactory:
        _REGISTRY[name] = factory
        return factory
    return decorator


def available_families() -> List[str]:
    return sorted(_REGISTRY)


def _vector(value, dim: int, what: str) -> np.ndarray:
    v = np.atleast_1d(np.asarray(value, dtype=float))
    if v.size == 1 and dim > 1:
        v = np.full(dim, float(v[0]))
    if v.shape != (dim,):
        raise ConfigError(f"{what} needs {dim} entries, got {v.size}")
    return v


def _diag(values: np.ndarray) -> np.ndarray:
    """(..., d) -> (..., d, d) diagonal matrices."""
    return values[..., :, None] * np.eye(values.shape[-1])


@register("zero")
def zero_field(dim: int) -> VectorField:
    return VectorField(dim=dim, func=lambda x: np.zeros(x.shape),
                       jac=lambda x: np.zeros(x.shape + (dim,)), bound=0.0, name="zero",
                       value=np.zeros(dim))


@register("constant")
def constant_field(dim: int, value=1.0) -> VectorField:
    v = _vector(value, dim, "constant value")
    return VectorField(dim=dim, func=lambda x: np.zeros(x.shape) + v,
                       jac=lambda x: np.zeros(x.shape + (dim,)),
                       bound=float(np.linalg.norm(v)), name="constant", value=v)


@register("linear")
def linear_field(dim: int, matrix=None, scale: float = 1.0) -> VectorField:
    """x -> M x; `scale` alone gives M = scale * I."""
    m = scale * np.eye(dim) if matrix is None else np.asarray(matrix, dtype=float).reshape(dim, dim)
    return VectorField(dim=dim, func=lambda x: np.sum(m * x[..., None, :], axis=-1),
                       jac=lambda x: np.zeros(x.shape + (dim,)) + m,
                       bound=0.0 if not np.any(m) else None, name="linear")


@register("sine")
def sine_field(dim: int, amplitude: float = 1.0, frequency: float = 1.0) -> VectorField:
    return VectorField(dim=dim, func=lambda x: amplitude * np.sin(frequency * x),
                       jac=lambda x: _diag(amplitude * frequency * np.cos(frequency * x)),
                       bound=abs(amplitude) * np.sqrt(dim), name="sine")


@register("tanh")
def tanh_field(dim: int, amplitude: float = 1.0) -> VectorField:
    return VectorField(dim=dim, func=lambda x: amplitude * np.tanh(x),
                       jac=lambda x: _diag(amplitude / np.cosh(x) ** 2),
                       bound=abs(amplitude) * np.sqrt(dim), name="tanh")


@register("sign")
def sign_field(dim: int, amplitude: float = 1.0) -> VectorField:
    """Coordinatewise one-sided sign, sign(0) = +1."""
    return VectorField(dim=dim, func=lambda x: amplitude * np.where(x >= 0, 1.0, -1.0),
                       jac=lambda x: np.zeros(x.shape + (dim,)),
                       bound=abs(amplitude) * np.sqrt(dim), name="sign")


@register("radial_saturating")
def radial_saturating_field(dim: int, direction=1.0) -> VectorField:
    """x -> v |x| / (1 + |x|); tends to v away from the origin under scaling."""
    v = _vector(direction, dim, "direction")

    def func(x):
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        return (r / (1.0 + r)) * v

    def jac(x):
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        safe = np.where(r > 0, r, 1.0)
        grad = np.where(r > 0, x / (safe * (1.0 + r) ** 2), 0.0)
        return v[:, None] * grad[..., None, :]

    return VectorField(dim=dim, func=func, jac=jac, bound=float(np.linalg.norm(v)),
                       name="radial_saturating")


def build_field(spec: Dict[str, Any], dim: int) -> VectorField:
    """Field from ``{family: name, <params>}``."""
    if not isinstance(spec, dict) or "family" not in spec:
        raise ConfigError("a field is declared as a mapping with a 'family' key")
    params = {k: v for k, v in spec.items() if k != "family"}
    name = spec["family"]
    if name not in _REGISTRY:
        raise UnknownFamilyError(f"unknown coefficient family '{name}'; known: {available_families()}",
                                 field="family")
    try:
        return _REGISTRY[name](dim, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for family '{name}': {exc}", field="family") from exc


PRESETS: Dict[str, Dict[str, Any]] = {
    # A_1 = 1, A_0 = 0: the flow is Brownian motion
    "brownian": {
        "dim": 1,
        "drift": {"family": "zero"},
        "diffusion": [{"family": "constant", "value": [1.0]}],
        "limit": {"drift": {"family": "zero"}, "diffusion": [{"family": "constant", "value": [1.0]}]},
    },
    "zero": {
        "dim": 1,
        "drift": {"family": "zero"},
        "diffusion": [{"family": "zero"}],
        "limit": {"drift": {"family": "zero"}, "diffusion": [{"family": "zero"}]},
    },
    # dX = X o dW, no declared limit
    "geometric": {
        "dim": 1,
        "drift": {"family": "zero"},
        "diffusion": [{"family": "linear", "scale": 1.0}],
    },
    "radial": {
        "dim": 1,
        "drift": {"family": "zero"},
        "diffusion": [{"family": "radial_saturating", "direction": [1.0]}],
        "limit": {"drift": {"family": "zero"}, "diffusion": [{"family": "constant", "value": [1.0]}]},
    },
}


def _build_limit(spec: Dict[str, Any], dim: int) -> LimitSystem:
    unknown = sorted(set(spec) - {"drift", "diffusion"})
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}", field="limit")
    if "diffusion" not in spec:
        raise ConfigError("limit fields need a 'diffusion' list", field="limit.diffusion")
    drift = build_field(spec.get("drift", {"family": "zero"}), dim)
    diffusion = tuple(build_field(s, dim) for s in spec["diffusion"])
    return LimitSystem(drift=drift, diffusion=diffusion)


def build_system(spec: Dict[str, Any], limit_spec: Optional[Dict[str, Any]] = None) -> CoefficientSystem:
    """System from a preset name or an explicit declaration.

    Explicit form: ``{dim, drift, diffusion: [...], limit: {drift, diffusion}}``.
    A non-empty `limit_spec` replaces the declared limit.
    """
    spec = dict(spec or {})
    name = "system"
    if "preset" in spec:
        preset = spec.pop("preset")
        if spec:
            raise ConfigError(f"preset systems take no further keys, got {sorted(spec)}", field="system")
        if preset not in PRESETS:
            raise UnknownFamilyError(f"unknown system preset '{preset}'; known: {sorted(PRESETS)}",
                                     field="system.preset")
        spec = dict(PRESETS[preset])
        name = preset
    unknown = sorted(set(spec) - {"dim", "drift", "diffusion", "limit", "name"})
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}", field="system")
    try:
        dim = int(spec["dim"])
        diffusion_specs = spec["diffusion"]
    except KeyError as exc:
        raise ConfigError(f"system declaration misses '{exc.args[0]}'", field="system") from exc
    drift = build_field(spec.get("drift", {"family": "zero"}), dim)
    diffusion = tuple(build_field(s, dim) for s in diffusion_specs)
    limit_decl = limit_spec if limit_spec else spec.get("limit")
    limit = _build_limit(limit_decl, dim) if limit_decl else None
    system = CoefficientSystem(drift=drift, diffusion=diffusion, name=spec.get("name", name), limit=limit)
    logger.debug(f"built system '{system.name}' d={system.dim} k={system.noise_dim}")
    return system
