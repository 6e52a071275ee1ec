"""
Rate function of the skeleton, distances to its unit level set and the
level-set radius bound.

The distance problem  min_{I(f) <= cap} sup_t |xi_t - g(f)_t|  is solved for
many targets at once by projected accelerated gradient descent on a
log-sum-exp smoothing of the sup norm, with discrete-adjoint gradients.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .coefficients import LimitSystem
from .paths import SamplePath, interp_path, sup_distance, uniform_times
from .skeleton import Control, DEFAULT_SUBSTEPS, energy, integrate_skeleton, skeleton_gradient, skeleton_trajectory
from .utils.errors import ParameterRangeError, RankDeficiencyError, UnboundedFieldsError
from .utils.logger import stage_timer

logger = logging.getLogger(__name__)

RANK_TOL = 1e-8
PINV_REG = 1e-10


@dataclass
class DistOptions:
    cap: float = 1.0
    random_starts: int = 4
    seed: int = 0
    betas: Tuple[float, ...] = (10.0, 100.0, 1000.0)
    max_iter: int = 200
    stall_window: int = 50
    stall_tol: float = 1e-10
    substeps: int = DEFAULT_SUBSTEPS
    smoothing: float = 1e-6
    batch_rows: int = 4096

    @classmethod
    def from_config(cls, spec: Dict[str, Any]) -> "DistOptions":
        known = {k: v for k, v in spec.items() if k in cls.__dataclass_fields__}
        if "betas" in known:
            known["betas"] = tuple(float(b) for b in known["betas"])
        return cls(**known)


@dataclass
class RateOptions:
    tol: float = 1e-3
    penalties: Tuple[float, ...] = (0.1, 1.0, 10.0)
    betas: Tuple[float, ...] = (10.0, 100.0, 1000.0)
    random_starts: int = 4
    seed: int = 0
    max_iter: int = 300
    substeps: int = DEFAULT_SUBSTEPS
    warm_start: bool = True

    def __post_init__(self):
        if len(self.penalties) != len(self.betas):
            raise ParameterRangeError(f"penalties and betas need one entry per stage, got "
                                      f"{len(self.penalties)} and {len(self.betas)}")

    @classmethod
    def from_config(cls, spec: Dict[str, Any]) -> "RateOptions":
        known = {k: v for k, v in spec.items() if k in cls.__dataclass_fields__}
        for key in ("penalties", "betas"):
            if key in known:
                known[key] = tuple(float(b) for b in known[key])
        return cls(**known)


@dataclass
class RateResult:
    value: float
    control: Control
    residual: float
    method: str
    iterations: int = 0
    start_index: int = 0
    converged: bool = True

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.value)

    def to_record(self) -> Dict[str, Any]:
        return {
            "value": self.value,
            "residual": self.residual,
            "method": self.method,
            "iterations": self.iterations,
            "start_index": self.start_index,
            "converged": self.converged,
        }


@dataclass
class ThetaQuery:
    target: SamplePath
    cap: float
    distance: float
    path: SamplePath
    control: Control
    iterations: int = 0
    start_index: int = 0
    converged: bool = True

    def to_record(self) -> Dict[str, Any]:
        return {
            "distance": self.distance,
            "cap": self.cap,
            "energy": energy(self.control),
            "iterations": self.iterations,
            "start_index": self.start_index,
            "converged": self.converged,
        }


def limit_set_radius(fields: LimitSystem, cap: float = 1.0) -> float:
    """Sup-norm radius containing every skeleton path from the origin with I(f) <= cap.

    |g_t| <= sqrt(2 cap) sup||A~||_op + sup|A~_0| by Cauchy-Schwarz. The operator
    norm is exact when every diffusion field is constant; otherwise it is
    bounded by the root-sum-square of the per-field bounds, so the radius is
    an upper bound.
    """
    unbounded = [f.name for f in fields.fields() if not f.is_bounded]
    if unbounded:
        raise UnboundedFieldsError(f"fields declared unbounded: {unbounded}")
    if all(f.is_constant for f in fields.diffusion):
        matrix = np.stack([f.value for f in fields.diffusion], axis=-1)      # (d, k)
        diffusion = float(np.linalg.norm(matrix, 2))
    else:
        diffusion = math.sqrt(sum(f.bound ** 2 for f in fields.diffusion))
    return math.sqrt(2.0 * cap) * diffusion + fields.drift.bound


def _start_point(fields: LimitSystem, x0: Optional[Sequence[float]]) -> np.ndarray:
    return np.zeros(fields.dim) if x0 is None else np.asarray(x0, dtype=float).reshape(fields.dim)


def pseudo_inverse_control(fields: LimitSystem, values: np.ndarray,
                           rank_tol: float = RANK_TOL, reg: float = PINV_REG) -> np.ndarray:
    """Least-norm control A~^T (A~ A~^T + reg I)^-1 (g' - A~_0) per cell, midpoint rule."""
    n = values.shape[0] - 1
    mid = 0.5 * (values[:-1] + values[1:])
    gdot = (values[1:] - values[:-1]) * n
    amat = fields.diffusion_at(mid)                          # (n, d, k)
    if fields.dim > fields.noise_dim:
        raise RankDeficiencyError(time=0.5 / n, sigma_min=0.0)
    sigma = np.linalg.svd(amat, compute_uv=False)[:, -1]
    bad = np.flatnonzero(~(sigma > rank_tol))
    if bad.size:
        first = int(bad[0])
        raise RankDeficiencyError(time=(first + 0.5) / n, sigma_min=float(sigma[first]))
    gram = amat @ np.swapaxes(amat, -1, -2) + reg * np.eye(fields.dim)
    demand = gdot - fields.drift_at(mid)
    y = np.linalg.solve(gram, demand[..., None])
    return (np.swapaxes(amat, -1, -2) @ y)[..., 0]


def _node_residual(fields: LimitSystem, control: Control, g: SamplePath, x0: np.ndarray,
                   substeps: int) -> float:
    """Sup mismatch between g and the re-integrated skeleton on g's grid."""
    fine = integrate_skeleton(fields, control, x0, substeps)
    return float(sup_distance(fine.at(g.times), g.values))


def rate_exact_full_rank(fields: LimitSystem, g: SamplePath, x0: Optional[Sequence[float]] = None,
                         substeps: int = DEFAULT_SUBSTEPS, tol: float = 1e-3) -> RateResult:
    """Closed-form rate when the diffusion matrix has full row rank along g."""
    start = _start_point(fields, x0)
    mismatch = float(np.linalg.norm(g.values[0] - start))
    if mismatch > tol:
        return RateResult(value=math.inf, control=Control.zeros(g.m, fields.noise_dim),
                          residual=mismatch, method="exact-pseudo-inverse")
    control = Control(pseudo_inverse_control(fields, g.values))
    residual = _node_residual(fields, control, g, start, substeps)
    return RateResult(value=energy(control), control=control, residual=residual,
                      method="exact-pseudo-inverse")


def _random_controls(m: int, k: int, count: int, seed: int, cap: float) -> np.ndarray:
    """Seeded random controls with energies spread over (0, cap)."""
    out = np.empty((count, m, k))
    for s in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), s + 1]))
        z = rng.standard_normal((m, k))
        target = cap * rng.uniform(0.1, 0.9)
        out[s] = z * math.sqrt(target / (0.5 * np.sum(z ** 2) / m))
    return out


def _fine_targets(values: np.ndarray, m: int, min_substeps: int) -> Tuple[np.ndarray, int]:
    """Targets on the fine RK4 grid; exact when the target grid refines the control grid."""
    n = values.shape[-2] - 1
    if n % m == 0 and n // m >= min_substeps:
        return values, n // m
    s = min_substeps
    return interp_path(uniform_times(n), values, uniform_times(m * s)), s


def _lse(e: np.ndarray, beta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Log-sum-exp over the last axis and its softmax weights."""
    top = np.max(e, axis=-1, keepdims=True)
    w = np.exp(beta * (e - top))
    total = np.sum(w, axis=-1, keepdims=True)
    return (top + np.log(total) / beta)[..., 0], w / total


class _DistanceObjective:
    """Smoothed sup distance between skeleton paths and per-row targets."""

    def __init__(self, fields: LimitSystem, targets: np.ndarray, x0: np.ndarray,
                 substeps: int, smoothing: float):
        self.fields = fields
        self.targets = targets          # (P, n + 1, d)
        self.x0 = x0
        self.substeps = substeps
        self.eta2 = smoothing ** 2

    def evaluate(self, theta: np.ndarray, problem: np.ndarray, beta: float, grad: bool = False):
        start = np.broadcast_to(self.x0, (theta.shape[0], self.x0.shape[0]))
        traj, stages = skeleton_trajectory(self.fields, theta, start, self.substeps, keep_stages=grad)
        r = traj - self.targets[problem]
        sq = np.sum(r ** 2, axis=-1)
        e = np.sqrt(sq + self.eta2)
        value, weights = _lse(e, beta)
        sup = np.sqrt(np.max(sq, axis=-1))
        if not grad:
            return value, sup
        traj_bar = (weights / e)[..., None] * r
        return value, sup, skeleton_gradient(self.fields, theta, stages, traj_bar, self.substeps)


def _project(theta: np.ndarray, radius: float) -> np.ndarray:
    norm = np.sqrt(np.sum(theta ** 2, axis=(-2, -1)))
    factor = np.minimum(1.0, radius / np.where(norm > 0, norm, 1.0))
    return theta * factor[:, None, None]


def _accelerated_descent(objective: _DistanceObjective, theta0: np.ndarray, problem: np.ndarray,
                         radius: float, opts: DistOptions):
    """Monotone projected FISTA with per-row backtracking, restarts and stall detection.

    Tracks, per row, the feasible iterate with the smallest true sup distance.
    """
    rows_total = theta0.shape[0]
    x = _project(theta0, radius)
    _, best_sup = objective.evaluate(x, problem, opts.betas[0])
    best = x.copy()
    iterations = np.zeros(rows_total, dtype=np.int64)
    converged = np.zeros(rows_total, dtype=bool)
    lip = np.ones(rows_total)
    prev_beta = opts.betas[0]

    for beta in opts.betas:
        lip *= beta / prev_beta
        prev_beta = beta
        fx, _ = objective.evaluate(x, problem, beta)
        y = x.copy()
        t = np.ones(rows_total)
        active = np.ones(rows_total, dtype=bool)
        history = np.tile(fx, (opts.stall_window, 1))
        converged[:] = False
        for it in range(opts.max_iter):
            rows = np.flatnonzero(active)
            if rows.size == 0:
                break
            yr = y[rows]
            fy, _, gy = objective.evaluate(yr, problem[rows], beta, grad=True)
            lr = lip[rows]
            z = x[rows].copy()
            fz = fx[rows].copy()
            sz = np.full(rows.size, np.inf)
            pending = np.ones(rows.size, dtype=bool)
            for _ in range(40):
                idx = np.flatnonzero(pending)
                cand = _project(yr[idx] - gy[idx] / lr[idx, None, None], radius)
                fc, sc = objective.evaluate(cand, problem[rows[idx]], beta)
                diff = cand - yr[idx]
                model = (fy[idx] + np.sum(gy[idx] * diff, axis=(-2, -1))
                         + 0.5 * lr[idx] * np.sum(diff ** 2, axis=(-2, -1)))
                ok = fc <= model + 1e-12 * (1.0 + np.abs(fy[idx]))
                z[idx[ok]], fz[idx[ok]], sz[idx[ok]] = cand[ok], fc[ok], sc[ok]
                lr[idx[~ok]] *= 2.0
                pending[idx[ok]] = False
                if not pending.any():
                    break
            lip[rows] = lr

            improved = sz < best_sup[rows]
            best_sup[rows[improved]] = sz[improved]
            best[rows[improved]] = z[improved]

            xr = x[rows]
            better = fz < fx[rows]
            x_new = np.where(better[:, None, None], z, xr)
            f_new = np.where(better, fz, fx[rows])
            tr = t[rows]
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tr ** 2))
            y_new = (x_new + (tr / t_new)[:, None, None] * (z - x_new)
                     + ((tr - 1.0) / t_new)[:, None, None] * (x_new - xr))
            y_new[~better] = x_new[~better]
            t_new[~better] = 1.0

            x[rows], fx[rows], y[rows], t[rows] = x_new, f_new, y_new, t_new
            lip[rows] *= 0.9
            iterations[rows] += 1

            slot = it % opts.stall_window
            old = history[slot, rows]
            history[slot, rows] = f_new
            if it >= opts.stall_window:
                stalled = old - f_new <= opts.stall_tol * (1.0 + np.abs(f_new))
                active[rows[stalled]] = False
                converged[rows[stalled]] = True
    return best, best_sup, iterations, converged


@dataclass
class DistanceBatch:
    distances: np.ndarray    # (P,)
    controls: np.ndarray     # (P, m, k)
    paths: np.ndarray        # (P, n + 1, d) skeleton paths on the fine grid
    iterations: np.ndarray
    start_index: np.ndarray
    converged: np.ndarray
    substeps: int = DEFAULT_SUBSTEPS


def dist_to_limit_set_batch(fields: LimitSystem, targets: np.ndarray, m: int = 64,
                            opts: Optional[DistOptions] = None,
                            warm_starts: Optional[np.ndarray] = None,
                            x0: Optional[Sequence[float]] = None) -> DistanceBatch:
    """Distances from many paths (P, n + 1, d) on a common uniform grid to the level set.

    Starts per problem: the zero control, `random_starts` seeded controls and,
    when given, one warm start per problem. The reported distance is the best
    true sup distance over all evaluated feasible controls; ties go to the
    lowest start index.
    """
    opts = opts or DistOptions()
    targets = np.asarray(targets, dtype=float)
    if targets.ndim != 3 or targets.shape[-1] != fields.dim:
        raise ParameterRangeError("targets must have shape (P, n + 1, d)")
    if not np.all(np.isfinite(targets)):
        raise ParameterRangeError("distance targets must be finite")
    if m < 1:
        raise ParameterRangeError(f"control grid m must be >= 1, got {m!r}")
    k = fields.noise_dim
    fine, substeps = _fine_targets(targets, m, opts.substeps)
    start = _start_point(fields, x0)
    radius = math.sqrt(2.0 * m * opts.cap)

    common = np.concatenate([np.zeros((1, m, k)),
                             _random_controls(m, k, opts.random_starts, opts.seed, opts.cap)], axis=0)
    n_starts = common.shape[0] + (0 if warm_starts is None else 1)
    problems = targets.shape[0]
    per_block = max(1, opts.batch_rows // n_starts)

    distances = np.empty(problems)
    controls = np.empty((problems, m, k))
    iterations = np.zeros(problems, dtype=np.int64)
    start_index = np.zeros(problems, dtype=np.int64)
    converged = np.zeros(problems, dtype=bool)
    objective = _DistanceObjective(fields, fine, start, substeps, opts.smoothing)

    with stage_timer("dist_to_limit_set", logger):
        for lo in range(0, problems, per_block):
            hi = min(problems, lo + per_block)
            count = hi - lo
            theta0 = np.repeat(common[None], count, axis=0)
            if warm_starts is not None:
                theta0 = np.concatenate([theta0, np.asarray(warm_starts, dtype=float)[lo:hi, None]], axis=1)
            problem = np.repeat(np.arange(lo, hi), n_starts)
            best, sup, its, conv = _accelerated_descent(
                objective, theta0.reshape(count * n_starts, m, k), problem, radius, opts)
            sup = sup.reshape(count, n_starts)
            pick = np.argmin(sup, axis=1)
            rows = np.arange(count) * n_starts + pick
            distances[lo:hi] = sup[np.arange(count), pick]
            controls[lo:hi] = best[rows]
            iterations[lo:hi] = its[rows]
            start_index[lo:hi] = pick
            converged[lo:hi] = conv[rows]

    paths, _ = skeleton_trajectory(fields, controls, np.broadcast_to(start, (problems, fields.dim)), substeps)
    return DistanceBatch(distances=distances, controls=controls, paths=paths, iterations=iterations,
                         start_index=start_index, converged=converged, substeps=substeps)


def dist_to_limit_set(fields: LimitSystem, xi: SamplePath, m: int = 64,
                      opts: Optional[DistOptions] = None,
                      x0: Optional[Sequence[float]] = None) -> ThetaQuery:
    """Sup distance from xi to {skeleton paths with I(f) <= cap}."""
    opts = opts or DistOptions()
    batch = dist_to_limit_set_batch(fields, xi.values[None], m, opts, x0=x0)
    if not batch.converged[0]:
        logger.info(f"distance search hit the iteration cap, distance={batch.distances[0]:.6g}")
    return ThetaQuery(target=xi, cap=opts.cap, distance=float(batch.distances[0]),
                      path=SamplePath(batch.paths[0]), control=Control(batch.controls[0]),
                      iterations=int(batch.iterations[0]), start_index=int(batch.start_index[0]),
                      converged=bool(batch.converged[0]))


class _PenaltyObjective:
    """Sum over stacked starts of I(f) + lam * LSE_beta(|r_t|^2 / tol^2)."""

    def __init__(self, fields: LimitSystem, target: np.ndarray, x0: np.ndarray, m: int,
                 substeps: int, tol: float, n_starts: int):
        self.fields = fields
        self.target = target
        self.x0 = np.broadcast_to(x0, (n_starts, x0.shape[0]))
        self.shape = (n_starts, m, fields.noise_dim)
        self.substeps = substeps
        self.tol2 = tol * tol
        self.penalty = 1.0
        self.beta = 10.0

    def parts(self, theta: np.ndarray, grad: bool = False):
        traj, stages = skeleton_trajectory(self.fields, theta, self.x0, self.substeps, keep_stages=grad)
        r = traj - self.target[None]
        rho = np.sum(r ** 2, axis=-1) / self.tol2
        lse, weights = _lse(rho, self.beta)
        m = theta.shape[1]
        energies = 0.5 * np.sum(theta ** 2, axis=(-2, -1)) / m
        values = energies + self.penalty * lse
        residual = np.sqrt(np.max(np.sum(r ** 2, axis=-1), axis=-1))
        if not grad:
            return values, energies, residual
        traj_bar = (self.penalty * weights * 2.0 / self.tol2)[..., None] * r
        gradient = theta / m + skeleton_gradient(self.fields, theta, stages, traj_bar, self.substeps)
        return values, energies, residual, gradient

    def __call__(self, flat: np.ndarray):
        theta = flat.reshape(self.shape)
        values, _, _, gradient = self.parts(theta, grad=True)
        return float(np.sum(values)), gradient.ravel()


def rate_variational(fields: LimitSystem, g: SamplePath, m: int = 64,
                     opts: Optional[RateOptions] = None,
                     x0: Optional[Sequence[float]] = None) -> RateResult:
    """Penalized minimum-energy control reproducing g, multi-start L-BFGS.

    Returns +inf (with the best residual) when no start brings the sup
    mismatch within 10 * tol.
    """
    opts = opts or RateOptions()
    if m < 8:
        raise ParameterRangeError(f"rate_variational needs m >= 8, got {m!r}")
    start = _start_point(fields, x0)
    k = fields.noise_dim
    mismatch = float(np.linalg.norm(g.values[0] - start))
    if mismatch > opts.tol:
        return RateResult(value=math.inf, control=Control.zeros(m, k), residual=mismatch,
                          method="variational", converged=False)

    fine, substeps = _fine_targets(g.values[None], m, opts.substeps)
    starts = [np.zeros((m, k))]
    starts.extend(_random_controls(m, k, opts.random_starts, opts.seed, 1.0))
    if opts.warm_start:
        try:
            starts.append(pseudo_inverse_control(fields, g.at(uniform_times(m))))
        except RankDeficiencyError as exc:
            logger.debug(f"no pseudo-inverse warm start: {exc}")
    theta = np.stack(starts, axis=0)
    objective = _PenaltyObjective(fields, fine[0], start, m, substeps, opts.tol, theta.shape[0])

    iterations = 0
    success = True
    with stage_timer("rate_variational", logger):
        for beta, penalty in zip(opts.betas, opts.penalties):
            objective.beta, objective.penalty = beta, penalty
            result = optimize.minimize(objective, theta.ravel(), jac=True, method="L-BFGS-B",
                                       options={"maxiter": opts.max_iter, "maxcor": 30,
                                                "ftol": 1e-15, "gtol": 1e-12})
            theta = result.x.reshape(objective.shape)
            iterations += int(result.nit)
            success = bool(result.success)

    values, energies, residuals = objective.parts(theta)
    best = int(np.argmin(values))
    residual = float(residuals[best])
    control = Control(theta[best])
    converged = residual <= opts.tol
    if not converged:
        logger.info(f"rate search residual {residual:.3g} above tolerance {opts.tol:g} "
                    f"(optimizer success={success})")
    value = float(energies[best]) if residual <= 10.0 * opts.tol else math.inf
    return RateResult(value=value, control=control, residual=residual, method="variational",
                      iterations=iterations, start_index=best, converged=converged)
