"""
Controlled skeleton ODE  g' = sum_j A_j(g) f'_j + A_0(g)  and the
Cameron-Martin energy of piecewise-constant controls.
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from .coefficients import LimitSystem, apply_matrix
from .paths import SamplePath
from .utils.errors import BlowUpError, ConfigError, ParameterRangeError

logger = logging.getLogger(__name__)

BLOWUP_LIMIT = 1e12
DEFAULT_SUBSTEPS = 4


@dataclass(frozen=True, eq=False)
class Control:
    """Piecewise-constant derivative f' on m uniform cells of [0, 1], shape (m, k)."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1:
            raise ParameterRangeError("a control needs at least one cell")
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def noise_dim(self) -> int:
        return self.values.shape[1]

    @property
    def energy(self) -> float:
        return energy(self)

    def f_path(self) -> np.ndarray:
        """f at the cell edges, f(0) = 0, shape (m + 1, k)."""
        return np.concatenate([np.zeros((1, self.noise_dim)),
                               np.cumsum(self.values, axis=0) / self.m], axis=0)

    def scaled(self, factor: float) -> "Control":
        return Control(self.values * factor)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"cell_index": np.arange(self.m)})
        for j in range(self.noise_dim):
            frame[f"f_dot_{j + 1}"] = self.values[:, j]
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "Control":
        cols = sorted((c for c in frame.columns if c.startswith("f_dot_")),
                      key=lambda c: int(c.rsplit("_", 1)[1]))
        return cls(frame.sort_values("cell_index")[cols].to_numpy(dtype=float))

    @classmethod
    def zeros(cls, m: int, k: int) -> "Control":
        return cls(np.zeros((m, k)))

    @classmethod
    def constant(cls, m: int, slope: Sequence[float]) -> "Control":
        slope = np.atleast_1d(np.asarray(slope, dtype=float))
        return cls(np.tile(slope, (m, 1)))

    @classmethod
    def from_config(cls, spec: Dict[str, Any]) -> "Control":
        """``{f_dot: [[...], ...]}`` or ``{slope: [...], cells: m}``."""
        spec = dict(spec or {})
        unknown = sorted(set(spec) - {"f_dot", "slope", "cells"})
        if unknown:
            raise ConfigError(f"unknown key(s) {unknown}", field="control")
        if "f_dot" in spec:
            return cls(np.asarray(spec["f_dot"], dtype=float))
        if "slope" in spec:
            return cls.constant(int(spec.get("cells", 64)), spec["slope"])
        raise ConfigError("a control needs 'f_dot' or 'slope'", field="control")


def energy(control: Control) -> float:
    """1/2 * integral of |f'|^2, exact for piecewise-constant f'."""
    return 0.5 * float(np.sum(control.values ** 2)) / control.m


def _vector_field(fields: LimitSystem, y: np.ndarray, p: np.ndarray) -> np.ndarray:
    return apply_matrix(fields.diffusion_at(y), p) + fields.drift_at(y)


def _check_blowup(y: np.ndarray, t: float) -> None:
    if not np.all(np.abs(y) <= BLOWUP_LIMIT):
        raise BlowUpError(time=t)


def skeleton_trajectory(fields: LimitSystem, fdot: np.ndarray, x0: np.ndarray,
                        substeps: int = DEFAULT_SUBSTEPS, keep_stages: bool = False):
    """Batched RK4 over controls fdot (B, m, k) from x0 (B, d).

    Returns the trajectory (B, m * substeps + 1, d) and, with keep_stages, the
    stage points (n, 4, B, d) needed by the adjoint.
    """
    if substeps < 1:
        raise ParameterRangeError(f"substeps must be >= 1, got {substeps!r}")
    batch, m, _ = fdot.shape
    n = m * substeps
    h = 1.0 / n
    traj = np.empty((batch, n + 1, x0.shape[-1]))
    traj[:, 0] = x0
    stages = np.empty((n, 4) + x0.shape) if keep_stages else None
    y = x0
    for step in range(n):
        p = fdot[:, step // substeps]
        y1 = y
        k1 = _vector_field(fields, y1, p)
        y2 = y + 0.5 * h * k1
        k2 = _vector_field(fields, y2, p)
        y3 = y + 0.5 * h * k2
        k3 = _vector_field(fields, y3, p)
        y4 = y + h * k3
        k4 = _vector_field(fields, y4, p)
        if keep_stages:
            stages[step, 0], stages[step, 1], stages[step, 2], stages[step, 3] = y1, y2, y3, y4
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check_blowup(y, (step + 1) * h)
        traj[:, step + 1] = y
    return traj, stages


def _transpose_apply(matrix: np.ndarray, vector: np.ndarray) -> np.ndarray:
    """M^T v for (..., d, c) matrices and (..., d) vectors."""
    return np.sum(matrix * vector[..., :, None], axis=-2)


def skeleton_gradient(fields: LimitSystem, fdot: np.ndarray, stages: np.ndarray,
                      traj_bar: np.ndarray, substeps: int = DEFAULT_SUBSTEPS) -> np.ndarray:
    """Discrete adjoint of `skeleton_trajectory`.

    Given dJ/dtraj (B, n + 1, d) returns dJ/dfdot (B, m, k), differentiating
    the RK4 map stage by stage.
    """
    batch, m, k = fdot.shape
    n = m * substeps
    h = 1.0 / n
    grad = np.zeros_like(fdot)
    lam = traj_bar[:, n].copy()
    for cell in range(m - 1, -1, -1):
        p = fdot[:, cell]
        block = stages[cell * substeps:(cell + 1) * substeps]   # (s, 4, B, d)
        jac = _field_jacobian(fields, block, p)                  # (s, 4, B, d, d)
        amat = fields.diffusion_at(block)                        # (s, 4, B, d, k)
        pbar = np.zeros((batch, k))
        for local in range(substeps - 1, -1, -1):
            j1, j2, j3, j4 = jac[local]
            a1, a2, a3, a4 = amat[local]
            kb1 = (h / 6.0) * lam
            kb2 = (h / 3.0) * lam
            kb3 = (h / 3.0) * lam
            kb4 = (h / 6.0) * lam
            ybar = lam.copy()

            y4 = _transpose_apply(j4, kb4)
            pbar += _transpose_apply(a4, kb4)
            ybar += y4
            kb3 = kb3 + h * y4

            y3 = _transpose_apply(j3, kb3)
            pbar += _transpose_apply(a3, kb3)
            ybar += y3
            kb2 = kb2 + 0.5 * h * y3

            y2 = _transpose_apply(j2, kb2)
            pbar += _transpose_apply(a2, kb2)
            ybar += y2
            kb1 = kb1 + 0.5 * h * y2

            ybar += _transpose_apply(j1, kb1)
            pbar += _transpose_apply(a1, kb1)

            lam = ybar + traj_bar[:, cell * substeps + local]
        grad[:, cell] = pbar
    return grad


def _field_jacobian(fields: LimitSystem, points: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Jacobian of y -> A(y) p + A_0(y) at stacked points (..., B, d)."""
    jd = fields.diffusion_jacobians_at(points)        # (..., B, k, d, d)
    weighted = np.sum(jd * p[:, :, None, None], axis=-3)
    return weighted + fields.drift_jacobian_at(points)


def integrate_skeleton(fields: LimitSystem, control: Control, x0: Optional[Sequence[float]] = None,
                       substeps: int = DEFAULT_SUBSTEPS) -> SamplePath:
    """RK4 solution on the fine grid of m * substeps cells, g(0) = x0 (origin by default)."""
    if control.noise_dim != fields.noise_dim:
        raise ParameterRangeError(
            f"control has {control.noise_dim} components, fields have noise dimension {fields.noise_dim}")
    start = np.zeros(fields.dim) if x0 is None else np.asarray(x0, dtype=float).reshape(fields.dim)
    traj, _ = skeleton_trajectory(fields, control.values[None], start[None], substeps)
    return SamplePath(traj[0])
