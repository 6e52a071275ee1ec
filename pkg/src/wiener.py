"""
Scale functions, geometric multiresolution grids and seeded Wiener paths.

Window 0 covers [0, 1]; window i >= 1 covers [c^(i-1), c^i]. Every window
i >= 1 holds the same number of cells, so the process rescaled to [0, 1] at
any scale c^i is resolved at roughly the same step delta.
"""
import math
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np
import pandas as pd

from .paths import interp_path
from .utils.errors import ParameterRangeError, ScaleDomainError, ScaleHorizonError

ArrayLike = Union[float, Sequence[float], np.ndarray]

# Relative slack when comparing a requested time against grid times.
TIME_EPS = 1e-12


def _checked_scale(u: ArrayLike) -> np.ndarray:
    arr = np.asarray(u, dtype=float)
    bad = ~(arr > math.e)
    if np.any(bad):
        raise ScaleDomainError(float(np.atleast_1d(arr)[np.argmax(np.atleast_1d(bad))]))
    return arr


def loglog(u: ArrayLike):
    """L(u) = log log u, defined for u > e."""
    arr = _checked_scale(u)
    out = np.log(np.log(arr))
    return float(out) if out.ndim == 0 else out


def phi(u: ArrayLike):
    """phi(u) = sqrt(u log log u), defined for u > e."""
    arr = _checked_scale(u)
    out = np.sqrt(arr * np.log(np.log(arr)))
    return float(out) if out.ndim == 0 else out


def _cells(span: float, step: float) -> int:
    # ceil with slack so that e.g. 1/0.001 does not round up to 1001
    return max(1, int(math.ceil(span / step - 1e-9)))


@dataclass(frozen=True, eq=False)
class GeometricGrid:
    ratio: float
    n_windows: int
    delta: float
    times: np.ndarray
    window_start: np.ndarray  # index of the first grid point of each window, plus the end index

    @property
    def n_cells(self) -> int:
        return self.times.shape[0] - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def cells_per_window(self) -> np.ndarray:
        return np.diff(self.window_start)

    def window_bounds(self, i: int) -> tuple:
        if i == 0:
            return 0.0, 1.0
        return self.ratio ** (i - 1), self.ratio ** i

    def cell_window(self) -> np.ndarray:
        """Window index of every cell."""
        return np.repeat(np.arange(self.n_windows + 1), self.cells_per_window)

    def index_of(self, t: float) -> int:
        """Index of the grid point equal to t (within relative TIME_EPS)."""
        idx = int(np.searchsorted(self.times, t * (1 - TIME_EPS), side="left"))
        if idx > self.n_cells or abs(self.times[idx] - t) > TIME_EPS * max(1.0, abs(t)):
            raise ParameterRangeError(f"t={t!r} is not a grid point")
        return idx

    def check_horizon(self, t: float) -> None:
        if t > self.horizon * (1 + TIME_EPS):
            raise ScaleHorizonError(t, self.horizon)


def build_grid(c: float, n_windows: int, delta: float) -> GeometricGrid:
    """Geometric grid over [0, c^N] with rescaled resolution delta."""
    if not c > 1:
        raise ParameterRangeError(f"ratio c must be > 1, got {c!r}")
    if int(n_windows) != n_windows or n_windows < 1:
        raise ParameterRangeError(f"window count N must be a positive integer, got {n_windows!r}")
    if not 0 < delta < 1:
        raise ParameterRangeError(f"resolution delta must lie in (0, 1), got {delta!r}")
    n_windows = int(n_windows)
    c = float(c)

    first = _cells(1.0, delta)
    per_window = _cells(c - 1.0, delta)
    pieces = [np.linspace(0.0, 1.0, first + 1)]
    for i in range(1, n_windows + 1):
        pieces.append(np.linspace(c ** (i - 1), c ** i, per_window + 1)[1:])
    times = np.concatenate(pieces)
    window_start = np.concatenate([[0], first + per_window * np.arange(n_windows + 1)])
    return GeometricGrid(ratio=c, n_windows=n_windows, delta=float(delta),
                         times=times, window_start=window_start.astype(np.int64))


@dataclass(frozen=True, eq=False)
class WienerPath:
    grid: GeometricGrid
    noise_dim: int
    seed: int
    increments: np.ndarray  # (n_cells, k)
    values: np.ndarray      # (n_cells + 1, k), values[0] = 0

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def horizon(self) -> float:
        return self.grid.horizon

    def value_at(self, t: ArrayLike) -> np.ndarray:
        """W at arbitrary times in [0, horizon], linear between grid points."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t_arr < 0):
            raise ParameterRangeError("Wiener path queried at negative time")
        self.grid.check_horizon(float(t_arr.max()))
        out = interp_path(self.times, self.values, t_arr)
        return out[0] if np.ndim(t) == 0 else out

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            "window": np.concatenate([[0], self.grid.cell_window()]),
            "t": self.times,
        })
        for j in range(self.noise_dim):
            frame[f"W_{j + 1}"] = self.values[:, j]
        return frame


def _window_rng(seed: int, window: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(window)]))


def sample_path(grid: GeometricGrid, k: int, seed: int) -> WienerPath:
    """Seeded k-dimensional Wiener path on `grid`.

    Each window draws from its own stream keyed by (seed, window), so growing
    the window count extends a path without touching earlier windows.
    """
    if k < 1:
        raise ParameterRangeError(f"noise dimension must be >= 1, got {k!r}")
    if seed < 0:
        raise ParameterRangeError(f"seed must be non-negative, got {seed!r}")
    widths = grid.widths
    blocks = []
    for w in range(grid.n_windows + 1):
        lo, hi = grid.window_start[w], grid.window_start[w + 1]
        z = _window_rng(seed, w).standard_normal((hi - lo, k))
        blocks.append(z * np.sqrt(widths[lo:hi])[:, None])
    increments = np.concatenate(blocks, axis=0)
    values = np.concatenate([np.zeros((1, k)), np.cumsum(increments, axis=0)], axis=0)
    return WienerPath(grid=grid, noise_dim=int(k), seed=int(seed),
                      increments=increments, values=values)


def sample_paths(grid: GeometricGrid, k: int, seeds: Sequence[int]) -> List[WienerPath]:
    return [sample_path(grid, k, s) for s in seeds]


def coarsen(path: WienerPath, factor: int) -> WienerPath:
    """Same realization on a grid keeping every `factor`-th point."""
    if factor < 1 or path.grid.cells_per_window.min() % factor:
        raise ParameterRangeError(f"factor {factor!r} does not divide every window's cell count")
    grid = GeometricGrid(ratio=path.grid.ratio, n_windows=path.grid.n_windows,
                         delta=path.grid.delta * factor,
                         times=path.grid.times[::factor],
                         window_start=path.grid.window_start // factor)
    values = path.values[::factor]
    return WienerPath(grid=grid, noise_dim=path.noise_dim, seed=path.seed,
                      increments=np.diff(values, axis=0), values=values)


@dataclass(frozen=True, eq=False)
class RescaledPath:
    """s -> W_{us}/sqrt(u) on [0, 1], on the grid points of [0, u] plus s = 1."""
    u: float
    times: np.ndarray   # rescaled times in [0, 1]
    values: np.ndarray  # (n + 1, k)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)

    def value_at(self, s: ArrayLike) -> np.ndarray:
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        out = interp_path(self.times, self.values, s_arr)
        return out[0] if np.ndim(s) == 0 else out


def rescaled_increments(path: WienerPath, u: float) -> RescaledPath:
    """Brownian rescaling of the portion of `path` covering [0, u]."""
    if not u > 0:
        raise ParameterRangeError(f"rescaling needs u > 0, got {u!r}")
    path.grid.check_horizon(u)
    u = min(float(u), path.horizon)
    times = path.times
    n_inside = int(np.searchsorted(times, u * (1 - TIME_EPS), side="left"))
    real = np.append(times[:n_inside], u)
    values = np.concatenate([path.values[:n_inside], path.value_at(np.array([u]))], axis=0)
    if abs(times[min(n_inside, len(times) - 1)] - u) <= TIME_EPS * u:
        values[-1] = path.values[n_inside]
    root = math.sqrt(u)
    return RescaledPath(u=u, times=real / u, values=values / root)
