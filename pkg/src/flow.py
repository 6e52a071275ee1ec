"""
Stratonovich flow along a realized Wiener path, the anticipating solution
X_t = phi_t(X_0) and the rescaled process xi^u_t = X_{ut} / phi(u).
"""
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .coefficients import CoefficientSystem, LimitSystem, apply_matrix, ito_drift, rescale
from .initial_conditions import InitialConditionSpec
from .paths import SamplePath, interp_path, uniform_times
from .utils.errors import BlowUpError, ParameterRangeError
from .wiener import TIME_EPS, WienerPath, phi, rescaled_increments

logger = logging.getLogger(__name__)

BLOWUP_LIMIT = 1e12
SCHEMES = ("heun", "ito_euler")


@dataclass(frozen=True, eq=False)
class FlowPath:
    """Solution values on the grid times of the driving path."""
    times: np.ndarray   # (n + 1,)
    values: np.ndarray  # (n + 1, d), or (B, n + 1, d) for a batch
    scheme: str

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def end(self) -> np.ndarray:
        return self.values[..., -1, :]

    def value_at(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return interp_path(self.times, self.values, t)

    def to_frame(self) -> pd.DataFrame:
        if self.values.ndim != 2:
            raise ParameterRangeError("only a single flow path can be dumped")
        frame = pd.DataFrame({"t": self.times})
        for j in range(self.dim):
            frame[f"X_{j + 1}"] = self.values[:, j]
        return frame


def _heun_step(system: LimitSystem, y: np.ndarray, dt: float, dw: np.ndarray) -> np.ndarray:
    a0 = system.drift_at(y)
    a = system.diffusion_at(y)
    y_bar = y + a0 * dt + apply_matrix(a, dw)
    a0_bar = system.drift_at(y_bar)
    a_bar = system.diffusion_at(y_bar)
    return y + 0.5 * (a0 + a0_bar) * dt + apply_matrix(0.5 * (a + a_bar), dw)


def _integrate(system: LimitSystem, x0: np.ndarray, times: np.ndarray, dws: np.ndarray,
               scheme: str) -> np.ndarray:
    """March x0 (B, d) along increments dws (B, n, k) on `times` (n + 1,)."""
    if scheme not in SCHEMES:
        raise ParameterRangeError(f"unknown scheme '{scheme}', expected one of {SCHEMES}")
    n = times.shape[0] - 1
    dts = np.diff(times)
    out = np.empty((x0.shape[0], n + 1, x0.shape[1]))
    out[:, 0] = x0
    y = x0
    if scheme == "ito_euler":
        b = ito_drift(system)
    for step in range(n):
        dw = dws[:, step]
        if scheme == "heun":
            y = _heun_step(system, y, dts[step], dw)
        else:
            y = y + b(y) * dts[step] + apply_matrix(system.diffusion_at(y), dw)
        if not np.all(np.abs(y) <= BLOWUP_LIMIT):
            rows = np.flatnonzero(~np.all(np.abs(y) <= BLOWUP_LIMIT, axis=-1))
            err = BlowUpError(time=float(times[step + 1]))
            err.rows = rows
            raise err
        out[:, step + 1] = y
    return out


def _segment(path: WienerPath, t0: float, horizon: float) -> tuple:
    grid = path.grid
    grid.check_horizon(horizon)
    if horizon < t0:
        raise ParameterRangeError(f"horizon {horizon!r} precedes start time {t0!r}")
    start = grid.index_of(t0) if t0 > 0 else 0
    end = int(np.searchsorted(grid.times, horizon * (1 - TIME_EPS), side="left"))
    end = min(max(end, start), grid.n_cells)
    return start, end


def solve_flow(system: LimitSystem, path: WienerPath, x0, horizon: float,
               scheme: str = "heun", t0: float = 0.0) -> FlowPath:
    """Solve dX = A_0 dt + sum_j A_j o dW^j from x0 at grid time t0 up to `horizon`.

    The solution runs to the first grid point at or beyond the horizon.
    """
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    if x0.shape[1] != system.dim:
        raise ParameterRangeError(f"x0 has {x0.shape[1]} coordinates, system dimension is {system.dim}")
    if path.noise_dim != system.noise_dim:
        raise ParameterRangeError("path and system noise dimensions differ")
    start, end = _segment(path, t0, horizon)
    times = path.times[start:end + 1]
    dws = path.increments[None, start:end]
    try:
        values = _integrate(system, x0, times, dws, scheme)
    except BlowUpError as exc:
        raise BlowUpError(time=exc.time, seed=path.seed) from exc
    return FlowPath(times=times, values=values[0], scheme=scheme)


def solve_flow_batch(system: LimitSystem, paths: Sequence[WienerPath], x0s: np.ndarray,
                     horizon: float, scheme: str = "heun") -> FlowPath:
    """One solve per path, all paths sharing a grid; values have shape (B, n + 1, d)."""
    if not paths:
        raise ParameterRangeError("no paths to solve")
    grid = paths[0].grid
    if any(p.grid.times.shape != grid.times.shape for p in paths):
        raise ParameterRangeError("batched paths must share one grid")
    x0s = np.asarray(x0s, dtype=float).reshape(len(paths), system.dim)
    start, end = _segment(paths[0], 0.0, horizon)
    times = grid.times[:end + 1]
    dws = np.stack([p.increments[:end] for p in paths], axis=0)
    try:
        values = _integrate(system, x0s, times, dws, scheme)
    except BlowUpError as exc:
        row = int(exc.rows[0])
        raise BlowUpError(time=exc.time, seed=paths[row].seed) from exc
    return FlowPath(times=times, values=values, scheme=scheme)


def solve_anticipating(system: LimitSystem, path: WienerPath, init: InitialConditionSpec,
                       horizon: float, scheme: str = "heun") -> FlowPath:
    """Flow evaluated at the realized, possibly anticipating, X_0."""
    x0 = init.realize(path, system.dim)
    return solve_flow(system, path, x0, horizon, scheme=scheme)


def rescaled_batch(flow: FlowPath, scales: Sequence[float], m: int) -> np.ndarray:
    """xi^u on the m-grid for every u, from one solved flow: (..., S, m + 1, d)."""
    t = uniform_times(m)
    blocks = []
    for u in scales:
        if u > flow.times[-1] * (1 + TIME_EPS):
            raise ParameterRangeError(f"scale {u!r} beyond the solved horizon {flow.times[-1]!r}")
        blocks.append(interp_path(flow.times, flow.values, u * t) / phi(float(u)))
    return np.stack(blocks, axis=-3)


def rescaled_solution(system: CoefficientSystem, path: WienerPath, init: InitialConditionSpec,
                      u: float, m: int = 256, route: str = "identity",
                      scheme: str = "heun") -> SamplePath:
    """xi^u on an m-cell grid of [0, 1].

    route="identity" rescales the flow in real time; route="direct" solves
    the rescaled equation with fields A_j^u / sqrt(L(u)), drift A_0^u and the
    rescaled path W_{us} / sqrt(u), started at X_0 / phi(u).
    """
    scale = phi(u)
    path.grid.check_horizon(u)
    x0 = init.realize(path, system.dim)
    if route == "identity":
        flow = solve_flow(system, path, x0, u, scheme=scheme)
        return SamplePath(rescaled_batch(flow, [u], m)[0])
    if route != "direct":
        raise ParameterRangeError(f"unknown route '{route}', expected identity or direct")
    resc = rescale(system, u).as_system()
    noise = rescaled_increments(path, u)
    try:
        values = _integrate(resc, (x0 / scale)[None, :], noise.times, noise.increments[None], scheme)
    except BlowUpError as exc:
        raise BlowUpError(time=exc.time * u, scale=u, seed=path.seed) from exc
    return SamplePath(interp_path(noise.times, values[0], uniform_times(m)))


def rescaled_frame(xi: SamplePath, u: float) -> pd.DataFrame:
    """Rescaled dump with columns (u, t, xi_1..xi_d)."""
    frame = xi.to_frame(prefix="xi")
    frame.insert(0, "u", float(u))
    return frame


def window_of(t: float, ratio: float) -> int:
    """Index i of the window [c^(i-1), c^i] containing real time t."""
    if t <= 1.0:
        return 0
    i = int(math.ceil(math.log(t) / math.log(ratio) - 1e-12))
    return max(i, 1)
