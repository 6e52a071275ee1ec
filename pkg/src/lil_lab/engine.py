"""
Geometric-scale harness: realizes one Wiener path per seed, solves the
anticipating flow once up to c^N and measures, window by window, how the
rescaled solutions xi^{c^i} approach and revisit the limit set.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from ..coefficients import LimitSystem
from ..families import build_system
from ..flow import rescaled_batch, solve_flow_batch, window_of
from ..initial_conditions import InitialConditionSpec
from ..paths import interp_path, sup_distance, uniform_times
from ..rate import dist_to_limit_set_batch
from ..skeleton import integrate_skeleton
from ..utils.errors import BlowUpError, ConfigError, ParameterRangeError, TargetEnergyError
from ..utils.logger import stage_timer
from ..wiener import TIME_EPS, build_grid, loglog, phi, sample_paths
from .config import LilConfig
from .report import LilReport

TRIANGLE_SLACK = 1e-9


def phi_ratio_bounds(c: float, indices: Sequence[int]) -> pd.DataFrame:
    """Per window, the range of phi(c^i)/phi(u) over u in [c^(i-1), c^i].

    phi is increasing above e, so the range is [1, phi(c^i)/phi(c^(i-1))];
    eps is the excess of the upper end over sqrt(c).
    """
    rows = []
    for i in indices:
        upper = phi(c ** i) / phi(c ** (i - 1))
        rows.append({
            "i": int(i),
            "lower": 1.0,
            "upper": float(upper),
            "sqrt_c": math.sqrt(c),
            "eps": float(upper / math.sqrt(c) - 1.0),
        })
    return pd.DataFrame(rows, columns=["i", "lower", "upper", "sqrt_c", "eps"])


def _run_chunk(config: LilConfig, method: str, seeds: List[int], *args):
    """Process-pool entry point: rebuild the engine and run one seed chunk."""
    return getattr(LilEngine(config), method)(seeds, *args)


class LilEngine:
    def __init__(self, config: LilConfig):
        self.logger = logging.getLogger(__name__)
        config.validate()
        self.config = config
        self.system = build_system(config.system, config.limit or None)
        if self.system.limit is None:
            raise ConfigError("the harness needs limit fields; declare 'limit' or use a preset with one",
                              field="limit")
        self.limit: LimitSystem = self.system.limit
        self.initial = InitialConditionSpec.from_config(config.initial)
        self.grid = build_grid(config.ratio, config.n_windows, config.delta)
        self.indices = config.indices
        self.scales = np.array(config.scales)
        self.dist_opts = config.dist_options()
        self.targets = config.target_controls()
        self.logger.debug(f"engine ready: c={config.ratio} N={config.n_windows} "
                          f"i0={config.first_index} cells={self.grid.n_cells}")

    # ------------------------------------------------------------------
    # shared realization

    def _realize(self, seeds: Sequence[int]):
        """Paths and the anticipating flow for a chunk of seeds, solved to c^N."""
        paths = sample_paths(self.grid, self.system.noise_dim, seeds)
        x0s = np.stack([self.initial.realize(p, self.system.dim) for p in paths])
        try:
            flow = solve_flow_batch(self.system, paths, x0s, self.grid.horizon, self.config.scheme)
        except BlowUpError as exc:
            index = window_of(exc.time, self.config.ratio)
            self.logger.error(f"flow blew up: seed={exc.seed} window={index} t={exc.time:.6g}")
            raise BlowUpError(time=exc.time, seed=exc.seed, index=index) from exc
        return paths, flow

    def _subgrid(self, i: int) -> np.ndarray:
        """Geometric u-subgrid of [c^(i-1), c^i], right end exact."""
        lo, hi = self.grid.window_bounds(i)
        n = self.config.subgrid_size
        if n == 1:
            return np.array([hi])
        us = lo * (hi / lo) ** (np.arange(n) / (n - 1))
        us[-1] = hi
        return us

    def _gamma(self, flow, xi: np.ndarray) -> np.ndarray:
        """Window discrepancy per (seed, window) from solved flows; xi is (B, S, m+1, d)."""
        gamma = np.zeros(xi.shape[:2])
        for s, i in enumerate(self.indices):
            us = self._subgrid(i)
            xi_u = rescaled_batch(flow, us, self.config.m)         # (B, n, m+1, d)
            ratio = phi(self.scales[s]) / np.atleast_1d(phi(us))
            scaled = ratio[None, :, None, None] * xi[:, s, None]
            gamma[:, s] = np.max(sup_distance(xi_u, scaled), axis=1)
        return gamma

    def _target_paths(self) -> List[np.ndarray]:
        paths = []
        for target_id, control in self.targets:
            e = control.energy
            if not e < 1.0:
                raise TargetEnergyError(target_id=target_id, energy=e)
            g = integrate_skeleton(self.limit, control, substeps=self.dist_opts.substeps)
            paths.append(g.resample(self.config.m).values)
        return paths

    def _frame(self, seeds, xi, dist, gamma, target_dist=None) -> pd.DataFrame:
        b, s = xi.shape[:2]
        frame = pd.DataFrame({
            "seed": np.repeat(np.asarray(seeds, dtype=np.int64), s),
            "i": np.tile(np.asarray(self.indices, dtype=np.int64), b),
            "u": np.tile(self.scales, b),
            "dist_theta": dist.reshape(-1),
            "endpoint_norm": np.linalg.norm(xi[:, :, -1, :], axis=-1).reshape(-1),
            "gamma": gamma.reshape(-1),
        })
        if target_dist is None:
            frame["target_id"] = ""
            frame["dist_target"] = np.nan
            return frame
        parts = []
        for a, (target_id, _) in enumerate(self.targets):
            part = frame.copy()
            part["target_id"] = target_id
            part["dist_target"] = target_dist[:, :, a].reshape(-1)
            parts.append(part)
        return pd.concat(parts, ignore_index=True)

    # ------------------------------------------------------------------
    # per-chunk work

    def convergence_rows(self, seeds: List[int]) -> pd.DataFrame:
        _, flow = self._realize(seeds)
        xi = rescaled_batch(flow, self.scales, self.config.m)
        b, s = xi.shape[:2]
        batch = dist_to_limit_set_batch(self.limit, xi.reshape((b * s,) + xi.shape[2:]),
                                        self.config.dist_m, self.dist_opts)
        if not np.all(batch.converged):
            self.logger.info(f"seeds {seeds[0]}..{seeds[-1]}: "
                             f"{int(np.sum(~batch.converged))} distance searches hit the iteration cap")
        target_dist = self._target_distances(xi) if self.targets else None
        return self._frame(seeds, xi, batch.distances.reshape(b, s), self._gamma(flow, xi), target_dist)

    def _target_distances(self, xi: np.ndarray) -> np.ndarray:
        targets = self._target_paths()
        return np.stack([sup_distance(xi, g[None, None]) for g in targets], axis=-1)

    def recurrence_rows(self, seeds: List[int]) -> pd.DataFrame:
        _, flow = self._realize(seeds)
        xi = rescaled_batch(flow, self.scales, self.config.m)
        target_dist = self._target_distances(xi)
        dist = np.full(xi.shape[:2], np.nan)
        return self._frame(seeds, xi, dist, self._gamma(flow, xi), target_dist)

    def gamma_rows(self, seeds: List[int]) -> pd.DataFrame:
        _, flow = self._realize(seeds)
        xi = rescaled_batch(flow, self.scales, self.config.m)
        gamma = self._gamma(flow, xi)
        return pd.DataFrame({
            "seed": np.repeat(np.asarray(seeds, dtype=np.int64), len(self.indices)),
            "i": np.tile(np.asarray(self.indices, dtype=np.int64), len(seeds)),
            "u": np.tile(self.scales, len(seeds)),
            "gamma": gamma.reshape(-1),
        })

    def oscillation_rows(self, seeds: List[int]) -> pd.DataFrame:
        _, flow = self._realize(seeds)
        xi = rescaled_batch(flow, self.scales, self.config.m)
        t = uniform_times(self.config.m)
        # mask[j, l]: t_l in [t_j / c, t_j]
        mask = (t[None, :] >= t[:, None] / self.config.ratio - TIME_EPS) & (t[None, :] <= t[:, None])
        osc = np.empty(xi.shape[:2])
        for b in range(xi.shape[0]):
            diff = np.linalg.norm(xi[b, :, :, None, :] - xi[b, :, None, :, :], axis=-1)
            osc[b] = np.max(np.where(mask, diff, 0.0), axis=(-2, -1))
        return pd.DataFrame({
            "seed": np.repeat(np.asarray(seeds, dtype=np.int64), len(self.indices)),
            "i": np.tile(np.asarray(self.indices, dtype=np.int64), len(seeds)),
            "u": np.tile(self.scales, len(seeds)),
            "oscillation": osc.reshape(-1),
        })

    def noise_rows(self, seeds: List[int]) -> pd.DataFrame:
        if not self.targets:
            raise ConfigError("noise closeness needs at least one target", field="lil.targets")
        paths = sample_paths(self.grid, self.system.noise_dim, seeds)
        t = uniform_times(self.config.m)
        rows = []
        for target_id, control in self.targets:
            f = interp_path(uniform_times(control.m), control.f_path(), t)
            for path in paths:
                for i, u in zip(self.indices, self.scales):
                    w = path.value_at(u * t) / phi(float(u))
                    rows.append({"seed": path.seed, "i": int(i), "u": float(u), "target_id": target_id,
                                 "noise_distance": float(sup_distance(w, f))})
        frame = pd.DataFrame(rows, columns=["seed", "i", "u", "target_id", "noise_distance"])
        return frame.sort_values(["seed", "i", "target_id"], kind="mergesort").reset_index(drop=True)

    def scan_rows(self, seeds: List[int], u_scan: Sequence[float]) -> pd.DataFrame:
        c = self.config.ratio
        lowest = self.grid.window_bounds(self.config.first_index)[0]
        windows = []
        for u in u_scan:
            self.grid.check_horizon(u)
            if u < lowest * (1 - TIME_EPS):
                raise ParameterRangeError(f"scan scale {u!r} lies below the first window start {lowest!r}")
            windows.append(max(window_of(u, c), self.config.first_index))
        u_scan = np.asarray(u_scan, dtype=float)
        _, flow = self._realize(seeds)
        xi_c = rescaled_batch(flow, self.scales, self.config.m)        # (B, S, m+1, d)
        b, s = xi_c.shape[:2]
        base = dist_to_limit_set_batch(self.limit, xi_c.reshape((b * s,) + xi_c.shape[2:]),
                                       self.config.dist_m, self.dist_opts)
        base_dist = base.distances.reshape(b, s)
        base_ctrl = base.controls.reshape((b, s) + base.controls.shape[1:])

        pos = np.array([self.indices.index(i) for i in windows])
        xi_u = rescaled_batch(flow, u_scan, self.config.m)             # (B, U, m+1, d)
        ratio = np.array([phi(self.scales[p]) / phi(float(u)) for p, u in zip(pos, u_scan)])
        anchor = xi_c[:, pos]
        beta1 = sup_distance(xi_u, ratio[None, :, None, None] * anchor)
        beta2 = np.sqrt(np.max(np.sum(anchor ** 2, axis=-1), axis=-1)) * np.abs(ratio - 1.0)[None, :]
        beta3 = base_dist[:, pos]
        n_u = len(u_scan)
        # the anchor's optimal control is always among the starts
        scan = dist_to_limit_set_batch(self.limit, xi_u.reshape((b * n_u,) + xi_u.shape[2:]),
                                       self.config.dist_m, self.dist_opts,
                                       warm_starts=base_ctrl[:, pos].reshape((b * n_u,) + base_ctrl.shape[2:]))
        dist = scan.distances.reshape(b, n_u)
        bound = beta1 + beta2 + beta3
        return pd.DataFrame({
            "seed": np.repeat(np.asarray(seeds, dtype=np.int64), n_u),
            "u": np.tile(u_scan, b),
            "i": np.tile(np.asarray(windows, dtype=np.int64), b),
            "dist_theta": dist.reshape(-1),
            "beta1": beta1.reshape(-1),
            "beta2": beta2.reshape(-1),
            "beta3": beta3.reshape(-1),
            "bound_holds": (dist <= bound + TRIANGLE_SLACK).reshape(-1),
        })

    # ------------------------------------------------------------------
    # scheduling

    def _map_seeds(self, method: str, *args) -> pd.DataFrame:
        """Run `method` over seed chunks, in a process pool when workers > 1; merge in seed order."""
        seeds = list(self.config.seeds)
        size = self.config.seed_chunk
        chunks = [seeds[lo:lo + size] for lo in range(0, len(seeds), size)]
        with stage_timer(f"lil_{method}", self.logger):
            if self.config.workers > 1 and len(chunks) > 1:
                with ProcessPoolExecutor(max_workers=self.config.workers) as pool:
                    futures = [pool.submit(_run_chunk, self.config, method, chunk, *args) for chunk in chunks]
                    parts = [f.result() for f in futures]
            else:
                parts = [getattr(self, method)(chunk, *args) for chunk in chunks]
        self.logger.info(f"{method}: {len(seeds)} seeds in {len(chunks)} chunk(s)")
        return pd.concat(parts, ignore_index=True)

    def run_convergence(self) -> LilReport:
        """Distance to the limit set, endpoint norm and window discrepancy per (seed, i)."""
        frame = self._map_seeds("convergence_rows")
        return LilReport(frame, rho=self.config.rho)

    def run_recurrence(self) -> LilReport:
        """Distances from xi^{c^i} to every target, per (seed, i, target)."""
        if not self.targets:
            raise ConfigError("recurrence needs at least one target", field="lil.targets")
        self._target_paths()
        frame = self._map_seeds("recurrence_rows")
        return LilReport(frame, rho=self.config.rho)

    def window_discrepancy(self) -> pd.DataFrame:
        return self._map_seeds("gamma_rows")

    def oscillation_stat(self) -> pd.DataFrame:
        return self._map_seeds("oscillation_rows")

    def noise_closeness(self) -> pd.DataFrame:
        return self._map_seeds("noise_rows")

    def scan_scales(self, u_scan: Sequence[float]) -> pd.DataFrame:
        """Distances at arbitrary scales with the three-term triangle bound per scale."""
        if not len(u_scan):
            raise ParameterRangeError("the scale scan needs at least one u")
        return self._map_seeds("scan_rows", [float(u) for u in u_scan])

    def ratio_sweep(self, ratios: Sequence[float]) -> pd.DataFrame:
        """Window-discrepancy maxima per seed across ratios, over the same scale range."""
        if not len(ratios):
            raise ParameterRangeError("the ratio sweep needs at least one ratio")
        base = self.config
        low = math.log(base.ratio) * (base.first_index - 1)
        high = math.log(self.grid.horizon)
        frames = []
        for c in ratios:
            if not c > 1:
                raise ParameterRangeError(f"ratio c must be > 1, got {c!r}")
            n_windows = int(math.floor(high / math.log(c) + 1e-9))
            first = max(int(math.ceil(low / math.log(c) - 1e-9)) + 1, 1)
            while c ** (first - 1) <= math.e:
                first += 1
            cfg = replace(base, ratio=float(c), n_windows=n_windows, burn_in=first)
            gamma = LilEngine(cfg).window_discrepancy()
            eps = phi_ratio_bounds(c, cfg.indices)["eps"].max()
            summary = gamma.groupby("seed", sort=True)["gamma"].agg(["max", "median"]).reset_index()
            summary.columns = ["seed", "gamma_max", "gamma_median"]
            summary.insert(0, "ratio", float(c))
            summary["first_index"] = first
            summary["n_windows"] = n_windows
            summary["phi_eps_max"] = float(eps)
            frames.append(summary)
        return pd.concat(frames, ignore_index=True)

    def phi_ratio_table(self) -> pd.DataFrame:
        return phi_ratio_bounds(self.config.ratio, self.indices)

    def describe(self) -> Dict[str, float]:
        return {
            "ratio": self.config.ratio,
            "first_index": self.config.first_index,
            "last_index": self.config.n_windows,
            "horizon": self.grid.horizon,
            "loglog_horizon": float(loglog(self.grid.horizon)),
            "cells": self.grid.n_cells,
        }
