#!/usr/bin/env python
"""
Command line front-end.

    python -m src.main <command> [--config PATH] [--out DIR]
                                 [--seeds N | --seed-list 1,2,3] [--set key=value ...]

Every command writes its results plus a `manifest.json` (resolved config,
its hash, seeds, library versions) into the output directory.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import pandas as pd

from .coefficients import check_coefficient_convergence, check_initial_tail
from .families import build_system
from .flow import rescaled_frame, rescaled_solution, solve_anticipating
from .initial_conditions import InitialConditionSpec
from .lil_lab import LilConfig, LilEngine
from .paths import SamplePath
from .rate import (DistOptions, RateOptions, dist_to_limit_set, limit_set_radius,
                   rate_exact_full_rank, rate_variational)
from .skeleton import Control, integrate_skeleton
from .utils.config import Settings, build_manifest, ensure_dir, load_experiment_config, section
from .utils.errors import (ConfigError, LabError, NonConvergenceError, RankDeficiencyError,
                           UnboundedFieldsError)
from .utils.logger import LabLogger, configure_logging
from .utils.serialization import write_csv, write_json, write_jsonl
from .wiener import build_grid, sample_path

logger = logging.getLogger("src.main")

COMMANDS = ("simulate", "skeleton", "rate", "dist", "lil", "check-h", "check-c")


def _grid(config: Dict[str, Any]):
    grid = section(config, "grid")
    return build_grid(float(grid["ratio"]), int(grid["n_windows"]), float(grid["delta"]))


def _system(config: Dict[str, Any]):
    return build_system(section(config, "system"), config.get("limit") or None)


def _fields(config: Dict[str, Any], which: str):
    system = _system(config)
    if which == "system":
        return system
    if which != "limit":
        raise ConfigError(f"unknown fields selector '{which}', expected limit or system", field="fields")
    if system.limit is None:
        raise ConfigError("no limit fields declared for this system", field="limit")
    return system.limit


def cmd_simulate(config: Dict[str, Any], out: Path) -> None:
    sim = section(config, "simulate")
    system = _system(config)
    grid = _grid(config)
    init = InitialConditionSpec.from_config(section(config, "initial"))
    for seed in config["runtime"]["seeds"]:
        path = sample_path(grid, system.noise_dim, int(seed))
        if sim["dump_path"]:
            write_csv(out / f"path_seed{seed}.csv", path.to_frame())
        if sim["mode"] == "rescaled":
            u = grid.horizon if sim["u"] is None else float(sim["u"])
            xi = rescaled_solution(system, path, init, u, m=int(sim["m"]),
                                   route=sim["route"], scheme=sim["scheme"])
            write_csv(out / f"xi_seed{seed}.csv", rescaled_frame(xi, u))
        elif sim["mode"] == "anticipating":
            horizon = grid.horizon if sim["horizon"] is None else float(sim["horizon"])
            flow = solve_anticipating(system, path, init, horizon, scheme=sim["scheme"])
            write_csv(out / f"flow_seed{seed}.csv", flow.to_frame())
        else:
            raise ConfigError(f"unknown mode '{sim['mode']}'", field="simulate.mode")
        logger.info(f"simulate: seed {seed} done")


def cmd_skeleton(config: Dict[str, Any], out: Path) -> None:
    sk = section(config, "skeleton")
    fields = _fields(config, sk["fields"])
    control = Control.from_config(sk["control"])
    g = integrate_skeleton(fields, control, sk["x0"], substeps=int(sk["substeps"]))
    write_csv(out / "skeleton_path.csv", g.to_frame(prefix="g"))
    write_csv(out / "control.csv", control.to_frame())
    write_json(out / "skeleton_summary.json", {
        "energy": control.energy, "cells": control.m, "substeps": int(sk["substeps"]),
        "sup_norm": g.sup_norm(),
    })


def cmd_rate(config: Dict[str, Any], out: Path) -> None:
    rc = section(config, "rate")
    fields = _fields(config, rc["fields"])
    target = SamplePath.from_config(rc["target"])
    opts = RateOptions.from_config(rc)
    method = rc["method"]
    if method not in ("exact", "variational", "both"):
        raise ConfigError(f"unknown method '{method}'", field="rate.method")
    results = []
    failures = []
    if method in ("exact", "both"):
        try:
            results.append(rate_exact_full_rank(fields, target, rc["x0"], substeps=opts.substeps, tol=opts.tol))
        except RankDeficiencyError as exc:
            if method == "exact":
                raise
            logger.warning(f"exact rate unavailable, falling back to the variational search: {exc}")
            failures.append({"method": "exact-pseudo-inverse", "error": "rank-deficient",
                             "time": exc.time, "sigma_min": exc.sigma_min})
    if method in ("variational", "both"):
        results.append(rate_variational(fields, target, m=int(rc["m"]), opts=opts, x0=rc["x0"]))
    write_jsonl(out / "rate_results.jsonl", failures + [r.to_record() for r in results])
    for r in results:
        write_csv(out / f"rate_control_{r.method}.csv", r.control.to_frame())
    summary: Dict[str, Any] = {r.method: r.value for r in results}
    if len(results) == 2 and all(r.is_finite for r in results) and results[0].value > 0:
        summary["relative_gap"] = abs(results[1].value - results[0].value) / results[0].value
    if failures:
        summary["exact_failure"] = failures[0]
    if rc["refine"]:
        rows = []
        for cells in sorted(int(c) for c in rc["refine"]):
            r = rate_variational(fields, target, m=cells, opts=opts, x0=rc["x0"])
            rows.append({"m": cells, "value": r.value, "residual": r.residual, "converged": r.converged})
            logger.info(f"rate refinement: m={cells} value={r.value:.6g}")
        write_csv(out / "rate_refinement.csv", pd.DataFrame(rows))
        summary["refinement"] = {str(row["m"]): row["value"] for row in rows}
    write_json(out / "rate_summary.json", summary)
    if rc.get("strict"):
        for r in results:
            if not r.converged:
                raise NonConvergenceError(r.method, r.residual, opts.tol)


def cmd_dist(config: Dict[str, Any], out: Path) -> None:
    dc = section(config, "dist")
    fields = _fields(config, "limit")
    target = SamplePath.from_config(dc["target"])
    opts = DistOptions.from_config(dc)
    query = dist_to_limit_set(fields, target, m=int(dc["m"]), opts=opts)
    record = query.to_record()
    try:
        record["radius_bound"] = limit_set_radius(fields, opts.cap)
    except UnboundedFieldsError:
        record["radius_bound"] = None
    write_json(out / "dist_result.json", record)
    write_csv(out / "dist_closest_path.csv", query.path.to_frame(prefix="g"))
    write_csv(out / "dist_control.csv", query.control.to_frame())


def cmd_lil(config: Dict[str, Any], out: Path) -> None:
    lil = section(config, "lil")
    engine = LilEngine(LilConfig.from_experiment(config))
    mode = lil["mode"]
    if mode == "convergence":
        engine.run_convergence().write(str(out))
        write_csv(out / "lil_phi_ratio.csv", engine.phi_ratio_table())
    elif mode == "recurrence":
        engine.run_recurrence().write(str(out))
    elif mode == "gamma":
        write_csv(out / "lil_gamma.csv", engine.window_discrepancy())
        write_csv(out / "lil_phi_ratio.csv", engine.phi_ratio_table())
    elif mode == "oscillation":
        write_csv(out / "lil_oscillation.csv", engine.oscillation_stat())
    elif mode == "noise":
        write_csv(out / "lil_noise.csv", engine.noise_closeness())
    elif mode == "scan":
        frame = engine.scan_scales(lil["u_scan"])
        write_csv(out / "lil_scan.csv", frame)
        if not bool(frame["bound_holds"].all()):
            logger.warning("triangle bound violated on some scanned scales")
    elif mode == "sweep":
        write_csv(out / "lil_sweep.csv", engine.ratio_sweep(lil["ratios"]))
    else:
        raise ConfigError(f"unknown mode '{mode}'", field="lil.mode")
    write_json(out / "lil_engine.json", engine.describe())


def cmd_check_h(config: Dict[str, Any], out: Path) -> None:
    ch = section(config, "check_h")
    system = _system(config)
    if system.limit is None:
        raise ConfigError("no limit fields declared for this system", field="limit")
    report = check_coefficient_convergence(system, system.limit, ch["box"], ch["scales"],
                                           grid_n=int(ch["grid_n"]), tol=float(ch["tol"]))
    write_csv(out / "check_h.csv", report.to_frame())
    write_json(out / "check_h.json", report.summary())
    logger.info(f"check-h verdict: {report.verdict}")


def cmd_check_c(config: Dict[str, Any], out: Path) -> None:
    cc = section(config, "check_c")
    system = _system(config)
    init = InitialConditionSpec.from_config(section(config, "initial"))
    report = check_initial_tail(init, cc["scales"], float(cc["delta"]), mc_samples=int(cc["mc_samples"]),
                                dim=system.dim, noise_dim=system.noise_dim, seed=int(cc["seed"]))
    write_csv(out / "check_c.csv", report.to_frame())
    write_json(out / "check_c.json", report.summary())
    logger.info(f"check-c verdict: {report.verdict}")


HANDLERS: Dict[str, Callable[[Dict[str, Any], Path], None]] = {
    "simulate": cmd_simulate,
    "skeleton": cmd_skeleton,
    "rate": cmd_rate,
    "dist": cmd_dist,
    "lil": cmd_lil,
    "check-h": cmd_check_h,
    "check-c": cmd_check_c,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m src.main",
                                     description="Rescaled anticipating SDE laboratory")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="YAML experiment file")
    parser.add_argument("--out", help="output directory (default: $LAB_OUTPUT_DIR/<command>)")
    seeds = parser.add_mutually_exclusive_group()
    seeds.add_argument("--seeds", type=int, help="use seeds 0..N-1")
    seeds.add_argument("--seed-list", help="comma separated seeds")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config value (repeatable)")
    return parser


def _seed_override(args: argparse.Namespace) -> List[str]:
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds needs a positive count", field="--seeds")
        return [f"runtime.seeds={list(range(args.seeds))}"]
    if args.seed_list:
        try:
            seeds = [int(s) for s in args.seed_list.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad seed list '{args.seed_list}'", field="--seed-list") from exc
        return [f"runtime.seeds={seeds}"]
    return []


def run(args: argparse.Namespace, settings: Settings, lab_logger: LabLogger) -> int:
    overrides = list(args.overrides) + _seed_override(args)
    config = load_experiment_config(args.config, overrides, settings)
    out = ensure_dir(args.out or str(Path(settings.LAB_OUTPUT_DIR) / args.command))
    seeds = config["runtime"]["seeds"]
    lab_logger.log_with_metrics(logging.INFO, f"{args.command} started", component=args.command,
                                out=out, seeds=len(seeds))
    HANDLERS[args.command](config, out)
    write_json(out / "manifest.json", build_manifest(config, args.command, seeds))
    lab_logger.log_with_metrics(logging.INFO, f"{args.command} finished", component=args.command)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = Settings.load_from_env()
        lab_logger = configure_logging(settings)
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    try:
        return run(args, settings, lab_logger)
    except LabError as exc:
        lab_logger.log_with_metrics(logging.ERROR, f"{args.command} failed: {exc}",
                                    component=args.command, exit_code=exc.exit_code)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        logger.exception(f"{args.command} crashed: {exc}")
        return 1
    finally:
        lab_logger.export_metrics()
        lab_logger.close()


if __name__ == "__main__":
    sys.exit(main())
