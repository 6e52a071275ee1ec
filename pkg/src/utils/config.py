"""
Process settings (environment) and experiment configuration (YAML).
"""
import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import yaml
from dotenv import load_dotenv

from .errors import ConfigError
from .serialization import to_jsonable

SQRT2 = 1.4142135623730951


@dataclass
class Settings:
    LAB_LOG_DIR: str
    LAB_LOG_LEVEL: str
    LAB_WORKERS: int
    LAB_OUTPUT_DIR: str

    @classmethod
    def load_from_env(cls) -> 'Settings':
        load_dotenv()

        try:
            workers = int(os.getenv('LAB_WORKERS', '1'))
        except ValueError as exc:
            raise ConfigError("LAB_WORKERS must be an integer", field="LAB_WORKERS") from exc
        return cls(
            LAB_LOG_DIR=os.getenv('LAB_LOG_DIR', 'logs'),
            LAB_LOG_LEVEL=os.getenv('LAB_LOG_LEVEL', 'INFO'),
            LAB_WORKERS=workers,
            LAB_OUTPUT_DIR=os.getenv('LAB_OUTPUT_DIR', 'results'),
        )


# Sections whose contents are validated by the builder that consumes them.
FREEFORM = frozenset({
    "system", "limit", "initial", "skeleton.control", "rate.target", "dist.target",
})


def default_experiment_config() -> Dict[str, Any]:
    """Get the default experiment configuration."""
    return {
        'system': {'preset': 'brownian'},
        'limit': {},
        'initial': {'kind': 'point', 'point': [0.0]},
        'grid': {
            'ratio': 2.0,
            'n_windows': 40,
            'delta': 1e-3,
        },
        'simulate': {
            'mode': 'rescaled',   # rescaled | anticipating
            'u': None,            # defaults to the grid horizon
            'horizon': None,
            'm': 256,
            'scheme': 'heun',     # heun | ito_euler
            'route': 'identity',  # identity | direct
            'dump_path': False,
        },
        'skeleton': {
            'control': {'slope': [SQRT2], 'cells': 64},
            'fields': 'limit',    # limit | system
            'x0': None,
            'substeps': 4,
        },
        'rate': {
            'target': {'kind': 'linear', 'slope': [SQRT2], 'm': 256},
            'fields': 'limit',
            'method': 'both',     # exact | variational | both
            'm': 64,
            'x0': None,
            'tol': 1e-3,
            'random_starts': 4,
            'max_iter': 300,
            'seed': 0,
            'strict': False,   # raise when a search ends above tolerance
            'refine': [],      # control cell counts for a variational refinement table
            'penalties': [0.1, 1.0, 10.0],   # one penalty weight per annealing stage
            'betas': [10.0, 100.0, 1000.0],   # log-sum-exp sharpness per stage
            'substeps': 4,
            'warm_start': True,
        },
        'dist': {
            'target': {'kind': 'linear', 'slope': [2.0], 'm': 256},
            'm': 64,
            'cap': 1.0,
            'random_starts': 4,
            'max_iter': 200,
            'seed': 0,
            'betas': [10.0, 100.0, 1000.0],
            'stall_window': 50,
            'stall_tol': 1e-10,
            'substeps': 4,
            'smoothing': 1e-6,
        },
        'lil': {
            'mode': 'convergence',   # convergence | recurrence | gamma | oscillation | noise | scan | sweep
            'm': 256,
            'burn_in': None,
            'rho': 0.5,
            'subgrid_size': 8,
            'targets': [],
            'u_scan': [],
            'ratios': [],
            'dist': {
                'm': 64,
                'cap': 1.0,
                'random_starts': 4,
                'max_iter': 200,
                'seed': 0,
                'betas': [10.0, 100.0, 1000.0],
                'stall_window': 50,
                'stall_tol': 1e-10,
                'substeps': 4,
                'smoothing': 1e-6,
            },
        },
        'check_h': {
            'box': [[-1.0, 1.0]],
            'scales': [1e2, 1e4, 1e8, 1e12],
            'grid_n': 21,
            'tol': 1e-3,
        },
        'check_c': {
            'scales': [1e2, 1e3, 1e4, 1e6],
            'delta': 1.0,
            'mc_samples': 10000,
            'seed': 0,
        },
        'runtime': {
            'seeds': [0],
            'workers': 1,
            'seed_chunk': 25,
        },
    }


def merge_config(user: Dict[str, Any], defaults: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    """Deep-merge `user` on top of `defaults`, rejecting unknown keys."""
    if not isinstance(user, dict):
        raise ConfigError("expected a mapping", field=prefix or "<root>")
    merged = copy.deepcopy(defaults)
    for key, value in user.items():
        dotted = f"{prefix}.{key}" if prefix else str(key)
        if key not in defaults:
            raise ConfigError("unknown configuration key", field=dotted)
        base = defaults[key]
        if isinstance(base, dict) and dotted not in FREEFORM:
            merged[key] = merge_config(value if value is not None else {}, base, dotted)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_override(item: str) -> tuple:
    """Split ``a.b=value``; the value is parsed as YAML."""
    if "=" not in item:
        raise ConfigError(f"override '{item}' is not of the form key=value", field="--set")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override '{item}' has an empty key", field="--set")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value '{raw}'", field=key) from exc
    return key, value


def apply_overrides(config: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    config = copy.deepcopy(config)
    for item in overrides:
        key, value = parse_override(item)
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
                node[part] = child
            node = child
        node[parts[-1]] = value
    return config


def read_config_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, 'r') as f:
            data = yaml.safe_load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"YAML syntax error in {path}: {getattr(exc, 'problem', exc)}", line=line) from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"top level of {path} must be a mapping")
    return data


def load_experiment_config(path: Optional[str] = None,
                           overrides: Iterable[str] = (),
                           settings: Optional[Settings] = None) -> Dict[str, Any]:
    """Resolve defaults <- environment <- file <- overrides."""
    defaults = default_experiment_config()
    if settings is not None:
        defaults["runtime"]["workers"] = int(settings.LAB_WORKERS)
    user = read_config_file(path) if path else {}
    user = apply_overrides(user, overrides)
    return merge_config(user, defaults)


def config_hash(config: Dict[str, Any]) -> str:
    payload = json.dumps(to_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def library_versions() -> Dict[str, str]:
    import numpy
    import pandas
    import scipy

    from .. import __version__

    return {
        'lab': __version__,
        'numpy': numpy.__version__,
        'pandas': pandas.__version__,
        'scipy': scipy.__version__,
    }


def build_manifest(config: Dict[str, Any], command: str, seeds: Iterable[int]) -> Dict[str, Any]:
    return {
        'command': command,
        'config': config,
        'config_sha256': config_hash(config),
        'seeds': [int(s) for s in seeds],
        'versions': library_versions(),
    }


def section(config: Dict[str, Any], name: str) -> Dict[str, Any]:
    try:
        return config[name]
    except KeyError as exc:
        raise ConfigError("missing configuration section", field=name) from exc


def ensure_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out
