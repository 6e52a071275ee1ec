"""
Initial conditions that may anticipate the driving noise.

A spec reads only the realized Wiener path (and an auxiliary seed), never
the solution, so X_0 can be realized before the flow is solved.
"""
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import special

from .utils.errors import ConfigError, ParameterRangeError
from .wiener import GeometricGrid, WienerPath, build_grid, sample_path

KINDS = ("point", "endpoint", "running_max", "gaussian", "cauchy", "bounded")


def log_chi_tail(z: float, q: int) -> float:
    """log P(|N(0, I_q)| > z), stable far into the tail."""
    if z <= 0:
        return 0.0
    if q == 1:
        return math.log(2.0) + float(special.log_ndtr(-z))
    a = 0.5 * q
    x = 0.5 * z * z
    tail = float(special.gammaincc(a, x))
    if tail > 1e-300:
        return math.log(tail)
    # Gamma(a, x) ~ x^(a-1) e^(-x) (1 + (a-1)/x + (a-1)(a-2)/x^2)
    series = 1.0 + (a - 1.0) / x + (a - 1.0) * (a - 2.0) / (x * x)
    return (a - 1.0) * math.log(x) - x - float(special.gammaln(a)) + math.log(series)


@dataclass(frozen=True)
class InitialConditionSpec:
    kind: str = "point"
    point: Tuple[float, ...] = ()
    scale: float = 1.0
    coordinate: int = 0
    direction: Tuple[float, ...] = ()
    aux_seed: int = 0
    bound: float = 1.0
    inner: Optional["InitialConditionSpec"] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown initial condition kind '{self.kind}'", field="initial.kind")
        if self.kind == "bounded" and self.inner is None:
            raise ConfigError("a bounded initial condition wraps an inner spec", field="initial.inner")
        if self.kind == "bounded" and not self.bound > 0:
            raise ParameterRangeError(f"bound must be > 0, got {self.bound!r}")
        object.__setattr__(self, "point", tuple(float(v) for v in self.point))
        object.__setattr__(self, "direction", tuple(float(v) for v in self.direction))

    @property
    def is_deterministic(self) -> bool:
        return self.kind == "point"

    def _unit_direction(self, dim: int) -> np.ndarray:
        if not self.direction:
            e = np.zeros(dim)
            e[0] = 1.0
            return e
        v = np.asarray(self.direction, dtype=float)
        if v.shape != (dim,) or not np.linalg.norm(v) > 0:
            raise ParameterRangeError(f"direction must be a nonzero vector of length {dim}")
        return v / np.linalg.norm(v)

    def realize(self, path: WienerPath, dim: int) -> np.ndarray:
        """X_0 as a function of the realized path."""
        if self.kind == "point":
            x = np.asarray(self.point if self.point else (0.0,) * dim, dtype=float)
            if x.shape != (dim,):
                raise ParameterRangeError(f"initial point has {x.size} coordinates, system dimension is {dim}")
            return x
        if self.kind == "endpoint":
            w1 = path.value_at(1.0)
            x = np.zeros(dim)
            q = min(dim, path.noise_dim)
            x[:q] = self.scale * w1[:q]
            return x
        if self.kind == "running_max":
            if not 0 <= self.coordinate < path.noise_dim:
                raise ParameterRangeError(f"coordinate {self.coordinate} outside noise dimension")
            end = int(path.grid.window_start[1])
            top = float(np.max(path.values[:end + 1, self.coordinate]))
            return self.scale * top * self._unit_direction(dim)
        if self.kind in ("gaussian", "cauchy"):
            rng = np.random.default_rng(np.random.SeedSequence([int(self.aux_seed), int(path.seed)]))
            draw = rng.standard_normal(dim) if self.kind == "gaussian" else rng.standard_cauchy(dim)
            return self.scale * draw
        # bounded
        inner = self.inner.realize(path, dim)
        return self.bound * np.tanh(inner / self.bound)

    def log_tail(self, r: float, dim: int, noise_dim: int) -> Optional[float]:
        """log P(|X_0| > r) in closed form, or None when the family has none."""
        if self.kind == "point":
            x = np.asarray(self.point if self.point else (0.0,) * dim, dtype=float)
            return 0.0 if np.linalg.norm(x) > r else -math.inf
        if self.kind == "endpoint":
            return log_chi_tail(r / self.scale, min(dim, noise_dim))
        if self.kind == "gaussian":
            return log_chi_tail(r / self.scale, dim)
        if self.kind == "running_max":
            # reflection principle: P(max_{[0,1]} W > z) = 2 P(W_1 > z)
            if r <= 0:
                return 0.0
            return math.log(2.0) + float(special.log_ndtr(-r / self.scale))
        if self.kind == "cauchy":
            if dim != 1:
                return None
            if r <= 0:
                return 0.0
            return math.log(2.0 / math.pi) + math.log(math.atan(self.scale / r))
        # bounded: each coordinate stays below the bound
        if r >= self.bound * math.sqrt(dim):
            return -math.inf
        return None

    def sample(self, n: int, dim: int, noise_dim: int, seed: int) -> np.ndarray:
        """n independent draws of X_0, each from its own path seed."""
        grid = unit_grid()
        seeds = np.random.SeedSequence(int(seed)).generate_state(n, dtype=np.uint32)
        out = np.empty((n, dim))
        for a, s in enumerate(seeds):
            out[a] = self.realize(sample_path(grid, noise_dim, int(s)), dim)
        return out

    @classmethod
    def from_config(cls, spec: Dict[str, Any]) -> "InitialConditionSpec":
        spec = dict(spec or {})
        allowed = {"kind", "point", "scale", "coordinate", "direction", "aux_seed", "bound", "inner"}
        unknown = sorted(set(spec) - allowed)
        if unknown:
            raise ConfigError(f"unknown key(s) {unknown}", field="initial")
        inner = spec.pop("inner", None)
        if inner is not None:
            spec["inner"] = cls.from_config(inner)
        for key in ("point", "direction"):
            if key in spec:
                spec[key] = tuple(np.atleast_1d(np.asarray(spec[key], dtype=float)).tolist())
        try:
            return cls(**spec)
        except TypeError as exc:
            raise ConfigError(str(exc), field="initial") from exc


def unit_grid(delta: float = 1.0 / 64) -> GeometricGrid:
    """Smallest geometric grid that covers [0, 1]."""
    return build_grid(2.0, 1, delta)
