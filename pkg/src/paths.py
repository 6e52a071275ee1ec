"""
Continuous paths on [0, 1] sampled on uniform grids, with sup-norm structure.
"""
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from .utils.errors import ConfigError, ParameterRangeError


def interp_path(times: np.ndarray, values: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Linear interpolation of (..., n+1, d) values sampled at `times`.

    Exact at grid points. Queries outside [times[0], times[-1]] are clamped
    to the end cells and extrapolated linearly, callers are expected to stay
    inside.
    """
    times = np.asarray(times, dtype=float)
    query = np.asarray(query, dtype=float)
    n = times.shape[0] - 1
    if n == 0:
        return np.repeat(values[..., :1, :], query.shape[0], axis=-2)
    idx = np.clip(np.searchsorted(times, query, side="right") - 1, 0, n - 1)
    left = times[idx]
    w = (query - left) / (times[idx + 1] - left)
    w = w[:, None]
    return values[..., idx, :] * (1.0 - w) + values[..., idx + 1, :] * w


def uniform_times(m: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, m + 1)


def sup_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Max over grid points of the Euclidean norm of a - b (last two axes: points, dim)."""
    return np.sqrt(np.max(np.sum((a - b) ** 2, axis=-1), axis=-1))


@dataclass(frozen=True, eq=False)
class SamplePath:
    """A d-dimensional path on the uniform grid t_j = j/m, j = 0..m."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 2:
            raise ParameterRangeError("a sample path needs at least two grid points")
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return uniform_times(self.m)

    def sup_norm(self) -> float:
        return float(np.sqrt(np.max(np.sum(self.values ** 2, axis=-1))))

    def distance(self, other: "SamplePath") -> float:
        if other.values.shape != self.values.shape:
            raise ParameterRangeError("sup distance needs two paths on the same grid")
        return float(sup_distance(self.values, other.values))

    def at(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return interp_path(self.times, self.values, t)

    def resample(self, m: int) -> "SamplePath":
        return SamplePath(self.at(uniform_times(m)))

    def scaled(self, factor: float) -> "SamplePath":
        return SamplePath(self.values * factor)

    def to_frame(self, prefix: str = "X") -> pd.DataFrame:
        frame = pd.DataFrame({"t": self.times})
        for j in range(self.dim):
            frame[f"{prefix}_{j + 1}"] = self.values[:, j]
        return frame

    @classmethod
    def from_function(cls, fn, m: int) -> "SamplePath":
        t = uniform_times(m)
        return cls(np.asarray([np.atleast_1d(fn(s)) for s in t], dtype=float))

    @classmethod
    def linear(cls, slope: Sequence[float], m: int,
               offset: Optional[Sequence[float]] = None) -> "SamplePath":
        slope = np.atleast_1d(np.asarray(slope, dtype=float))
        start = np.zeros_like(slope) if offset is None else np.atleast_1d(np.asarray(offset, dtype=float))
        t = uniform_times(m)[:, None]
        return cls(start[None, :] + t * slope[None, :])

    @classmethod
    def from_config(cls, spec: Dict[str, Any]) -> "SamplePath":
        """Build a target path from a config mapping.

        kinds: ``linear`` (slope, offset, m), ``values`` (explicit rows).
        Skeleton-generated targets are built by the caller, which owns the fields.
        """
        spec = dict(spec)
        kind = spec.pop("kind", "linear")
        try:
            if kind == "linear":
                allowed = {"slope", "offset", "m"}
                _reject_unknown(spec, allowed, "target")
                return cls.linear(spec["slope"], int(spec.get("m", 256)), spec.get("offset"))
            if kind == "values":
                _reject_unknown(spec, {"values"}, "target")
                return cls(np.asarray(spec["values"], dtype=float))
        except KeyError as exc:
            raise ConfigError(f"missing key {exc.args[0]!r} in target path", field="target") from exc
        raise ConfigError(f"unknown target kind '{kind}'", field="target.kind")


def _reject_unknown(spec: Dict[str, Any], allowed, where: str) -> None:
    unknown = sorted(set(spec) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}", field=where)
