"""
Coefficient vector fields, the Ito drift correction, scale-rescaled families
and numerical checkers for coefficient convergence and initial-condition tails.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .initial_conditions import InitialConditionSpec
from .utils.errors import ParameterRangeError
from .wiener import loglog, phi

logger = logging.getLogger(__name__)

FieldMap = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class VectorField:
    """A map R^d -> R^d evaluated on stacked points of shape (..., d).

    `bound` is the declared sup norm of the field, None when unbounded.
    `value` is set for constant fields only.
    """
    dim: int
    func: FieldMap
    jac: Optional[FieldMap] = None
    bound: Optional[float] = None
    name: str = "field"
    value: Optional[np.ndarray] = None

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.func(x), dtype=float)

    @property
    def is_bounded(self) -> bool:
        return self.bound is not None

    @property
    def is_constant(self) -> bool:
        return self.value is not None

    def jacobian(self, x) -> np.ndarray:
        """Jacobian of shape (..., d, d); finite differences when no analytic form."""
        x = np.asarray(x, dtype=float)
        if self.jac is not None:
            return np.asarray(self.jac(x), dtype=float)
        return self.fd_jacobian(x)

    def fd_jacobian(self, x) -> np.ndarray:
        """Central differences with step 1e-6 * (1 + |x_i|) per coordinate."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape + (self.dim,))
        for i in range(self.dim):
            h = 1e-6 * (1.0 + np.abs(x[..., i]))
            xp = x.copy()
            xm = x.copy()
            xp[..., i] += h
            xm[..., i] -= h
            step = (xp[..., i] - xm[..., i])[..., None]
            out[..., :, i] = (self(xp) - self(xm)) / step
        return out


def _check_dims(drift: VectorField, diffusion: Sequence[VectorField]) -> None:
    if len(diffusion) < 1:
        raise ParameterRangeError("a system needs at least one diffusion field")
    dims = {drift.dim} | {a.dim for a in diffusion}
    if len(dims) != 1:
        raise ParameterRangeError(f"all fields must share one dimension, got {sorted(dims)}")


@dataclass(frozen=True, eq=False)
class LimitSystem:
    """Declared limit fields: drift A~_0 and diffusion A~_1..A~_k."""
    drift: VectorField
    diffusion: Tuple[VectorField, ...]
    name: str = "limit"

    def __post_init__(self):
        object.__setattr__(self, "diffusion", tuple(self.diffusion))
        _check_dims(self.drift, self.diffusion)

    @property
    def dim(self) -> int:
        return self.drift.dim

    @property
    def noise_dim(self) -> int:
        return len(self.diffusion)

    def fields(self) -> Tuple[VectorField, ...]:
        """(A_0, A_1, ..., A_k)."""
        return (self.drift,) + self.diffusion

    def drift_at(self, x: np.ndarray) -> np.ndarray:
        return self.drift(x)

    def diffusion_at(self, x: np.ndarray) -> np.ndarray:
        """Diffusion matrix [A_1(x) ... A_k(x)] of shape (..., d, k)."""
        return np.stack([a(x) for a in self.diffusion], axis=-1)

    def drift_jacobian_at(self, x: np.ndarray) -> np.ndarray:
        return self.drift.jacobian(x)

    def diffusion_jacobians_at(self, x: np.ndarray) -> np.ndarray:
        """Jacobians of A_1..A_k stacked as (..., k, d, d)."""
        return np.stack([a.jacobian(x) for a in self.diffusion], axis=-3)


@dataclass(frozen=True, eq=False)
class CoefficientSystem(LimitSystem):
    """Drift A_0, diffusion A_1..A_k and optional declared limit fields."""
    name: str = "system"
    limit: Optional[LimitSystem] = None

    def __post_init__(self):
        super().__post_init__()
        if self.limit is not None and (self.limit.dim != self.dim
                                       or self.limit.noise_dim != self.noise_dim):
            raise ParameterRangeError("limit fields must match the system's dimensions")


def apply_matrix(matrix: np.ndarray, vector: np.ndarray) -> np.ndarray:
    """(..., d, k) times (..., k) without einsum, row by row."""
    return np.sum(matrix * vector[..., None, :], axis=-1)


def ito_drift(system: LimitSystem) -> VectorField:
    """B = A_0 + 1/2 sum_j (dA_j) A_j."""
    def b(x):
        x = np.asarray(x, dtype=float)
        return system.drift_at(x) + 0.5 * _stratonovich_correction(system, x)

    return VectorField(dim=system.dim, func=b, jac=None, bound=None,
                       name=f"ito_drift({system.name})")


def _stratonovich_correction(system: LimitSystem, x: np.ndarray) -> np.ndarray:
    total = np.zeros(x.shape)
    for a in system.diffusion:
        total = total + apply_matrix(a.jacobian(x), a(x))
    return total


@dataclass(frozen=True, eq=False)
class RescaledSystem:
    """Fields of the process rescaled at scale u.

    A_j^u(z) = A_j(phi z) for j >= 1 and A_0^u(z) = (u / phi) A_0(phi z).
    """
    parent: CoefficientSystem
    u: float
    scale: float
    loglog: float
    drift: VectorField
    diffusion: Tuple[VectorField, ...]

    @property
    def dim(self) -> int:
        return self.parent.dim

    def drift_bracket(self, z) -> np.ndarray:
        """(u/phi) [B(phi z) - 1/2 sum_j (dA_j) A_j (phi z)], algebraically A_0^u."""
        x = self.scale * np.asarray(z, dtype=float)
        b = ito_drift(self.parent)(x)
        return (self.u / self.scale) * (b - 0.5 * _stratonovich_correction(self.parent, x))

    def as_system(self) -> CoefficientSystem:
        """Coefficients of the rescaled equation: noise fields carry 1/sqrt(L(u))."""
        factor = 1.0 / math.sqrt(self.loglog)
        noise = tuple(_scaled_field(a, factor) for a in self.diffusion)
        return CoefficientSystem(drift=self.drift, diffusion=noise,
                                 name=f"{self.parent.name}@u={self.u:g}")


def _scaled_field(a: VectorField, factor: float) -> VectorField:
    jac = None if a.jac is None else (lambda x, a=a: factor * a.jacobian(x))
    return VectorField(dim=a.dim, func=lambda x, a=a: factor * a(x), jac=jac,
                       bound=None if a.bound is None else factor * a.bound,
                       name=f"{factor:g}*{a.name}")


def _composed_field(a: VectorField, inner: float, outer: float) -> VectorField:
    """z -> outer * a(inner * z), Jacobian outer * inner * (da)(inner * z)."""
    def func(z, a=a):
        return outer * a(inner * np.asarray(z, dtype=float))

    def jac(z, a=a):
        return (outer * inner) * a.jacobian(inner * np.asarray(z, dtype=float))

    return VectorField(dim=a.dim, func=func, jac=jac,
                       bound=None if a.bound is None else abs(outer) * a.bound,
                       name=f"{a.name}^u")


def rescale(system: CoefficientSystem, u: float) -> RescaledSystem:
    s = phi(u)
    lu = loglog(u)
    diffusion = tuple(_composed_field(a, s, 1.0) for a in system.diffusion)
    drift = _composed_field(system.drift, s, u / s)
    return RescaledSystem(parent=system, u=float(u), scale=s, loglog=lu,
                          drift=drift, diffusion=diffusion)


def _check_scales(scales: Sequence[float]) -> np.ndarray:
    arr = np.asarray(list(scales), dtype=float)
    if arr.size == 0:
        raise ParameterRangeError("at least one scale is required")
    phi(arr)
    if np.any(np.diff(arr) <= 0):
        raise ParameterRangeError("scales must be strictly increasing")
    return arr


def box_grid(box: Sequence[Sequence[float]], grid_n: int) -> np.ndarray:
    """Uniform grid_n^d sample of an axis-aligned box, shape (grid_n^d, d)."""
    if grid_n < 2:
        raise ParameterRangeError(f"grid_n must be >= 2, got {grid_n!r}")
    axes = []
    for lo, hi in box:
        if not hi > lo:
            raise ParameterRangeError(f"box side [{lo}, {hi}] is empty")
        axes.append(np.linspace(lo, hi, grid_n))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _sup_with_witness(dev: np.ndarray, points: np.ndarray) -> Tuple[float, List[float], int]:
    finite = np.isfinite(dev)
    bad = int(np.count_nonzero(~finite))
    if not finite.any():
        return float("nan"), points[0].tolist(), bad
    masked = np.where(finite, dev, -np.inf)
    k = int(np.argmax(masked))
    return float(dev[k]), points[k].tolist(), bad


def _non_increasing(seq: np.ndarray) -> bool:
    if np.any(~np.isfinite(seq)):
        return False
    slack = 1e-12 * (1.0 + np.abs(seq[:-1]))
    return bool(np.all(seq[1:] <= seq[:-1] + slack))


@dataclass
class ConvergenceReport:
    """Per-scale, per-field deviations of rescaled fields from declared limits."""
    records: List[Dict[str, Any]]
    verdict: str
    tol: float
    failing_field: Optional[int] = None
    witness_point: Optional[List[float]] = None

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records)

    def summary(self) -> Dict[str, Any]:
        return {
            "verdict": self.verdict,
            "tol": self.tol,
            "failing_field": self.failing_field,
            "witness_point": self.witness_point,
            "max_sup_dev": max((r["sup_dev"] for r in self.records), default=0.0),
        }


def check_coefficient_convergence(system: CoefficientSystem, limit: LimitSystem,
                                  box: Sequence[Sequence[float]], scales: Sequence[float],
                                  grid_n: int = 21, tol: float = 1e-3) -> ConvergenceReport:
    """Grid check that A_j^u -> A~_j and dA_j^u -> dA~_j uniformly on a box."""
    scales = _check_scales(scales)
    if len(box) != system.dim:
        raise ParameterRangeError(f"box has {len(box)} sides, system dimension is {system.dim}")
    points = box_grid(box, grid_n)
    limit_fields = limit.fields()
    limit_values = [f(points) for f in limit_fields]
    limit_jacs = [f.jacobian(points) for f in limit_fields]

    records = []
    sups = np.zeros((len(scales), len(limit_fields)))
    jac_sups = np.zeros_like(sups)
    witnesses: Dict[Tuple[int, int], List[float]] = {}
    with np.errstate(all="ignore"):
        for a, u in enumerate(scales):
            resc = rescale(system, float(u))
            for j, field_u in enumerate((resc.drift,) + resc.diffusion):
                dev = np.linalg.norm(field_u(points) - limit_values[j], axis=-1)
                jdev = np.linalg.norm(field_u.jacobian(points) - limit_jacs[j], axis=(-2, -1))
                sup, witness, bad = _sup_with_witness(dev, points)
                jsup, _, jbad = _sup_with_witness(jdev, points)
                sups[a, j], jac_sups[a, j] = sup, jsup
                witnesses[(a, j)] = witness
                records.append({
                    "u": float(u), "j": j, "sup_dev": sup, "sup_dev_jacobian": jsup,
                    "witness_point": witness, "nonfinite": bad + jbad,
                })

    failing = None
    for j in range(len(limit_fields)):
        ok = (_non_increasing(sups[:, j]) and _non_increasing(jac_sups[:, j])
              and sups[-1, j] < tol and jac_sups[-1, j] < tol)
        if not ok:
            failing = j
            break
    verdict = "PASS" if failing is None else "FAIL"
    witness = None if failing is None else witnesses[(len(scales) - 1, failing)]
    if failing is not None:
        logger.info(f"coefficient convergence FAIL on field {failing} at {witness}")
    return ConvergenceReport(records=records, verdict=verdict, tol=tol,
                             failing_field=failing, witness_point=witness)


@dataclass
class TailReport:
    """Per-scale estimates of log P(|X_0| > delta phi(u)) / L(u)."""
    records: List[Dict[str, Any]]
    verdict: str
    delta: float

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records)

    def summary(self) -> Dict[str, Any]:
        return {
            "verdict": self.verdict,
            "delta": self.delta,
            "final_estimate": self.records[-1]["estimate"] if self.records else None,
        }


def check_initial_tail(initial: InitialConditionSpec, scales: Sequence[float], delta: float,
                       mc_samples: int = 10000, dim: int = 1, noise_dim: int = 1,
                       seed: int = 0) -> TailReport:
    """Analytic tail when the initial-condition family has one, Monte Carlo otherwise."""
    if not delta > 0:
        raise ParameterRangeError(f"delta must be > 0, got {delta!r}")
    scales = _check_scales(scales)
    samples = None
    records = []
    for u in scales:
        lu = loglog(float(u))
        r = delta * phi(float(u))
        log_tail = initial.log_tail(r, dim, noise_dim)
        if log_tail is not None:
            records.append({"u": float(u), "estimate": log_tail / lu, "method": "analytic",
                            "underflow": False})
            continue
        if samples is None:
            if mc_samples < 1:
                raise ParameterRangeError("mc_samples must be >= 1")
            samples = np.linalg.norm(initial.sample(mc_samples, dim, noise_dim, seed), axis=-1)
        count = int(np.count_nonzero(samples > r))
        underflow = count == 0
        p = (1 if underflow else count) / mc_samples
        records.append({"u": float(u), "estimate": math.log(p) / lu, "method": "monte_carlo",
                        "underflow": underflow})
        if underflow:
            logger.debug(f"tail count underflow at u={u:g}: estimate is an upper bound")

    return TailReport(records=records, verdict=_tail_verdict(records), delta=float(delta))


def _tail_verdict(records: List[Dict[str, Any]]) -> str:
    # underflowed Monte Carlo entries are upper bounds only and cannot refute decay
    est = np.array([r["estimate"] for r in records if not r["underflow"]])
    underflow = any(r["underflow"] for r in records)
    if est.size == 0:
        return "PASS"
    if np.any(np.isnan(est)) or np.any(est[1:] > est[:-1]):
        return "FAIL"
    if underflow or np.isneginf(est[-1]) or est[-1] < est[0]:
        return "PASS"
    return "FAIL"
