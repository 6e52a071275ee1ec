"""
Harness configuration.
"""
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from ..rate import DistOptions
from ..skeleton import Control
from ..utils.errors import ConfigError, ParameterRangeError

SCHEMES = ("heun", "ito_euler")


def default_burn_in(ratio: float) -> int:
    """Smallest i with c^(i-1) > e^e, i.e. L(c^(i-1)) > 1."""
    i = 1
    while ratio ** (i - 1) <= math.exp(math.e):
        i += 1
    return i


@dataclass
class LilConfig:
    system: Dict[str, Any] = field(default_factory=lambda: {"preset": "brownian"})
    limit: Dict[str, Any] = field(default_factory=dict)
    initial: Dict[str, Any] = field(default_factory=lambda: {"kind": "point"})
    ratio: float = 2.0
    n_windows: int = 40
    delta: float = 1e-3
    m: int = 256
    burn_in: Optional[int] = None
    seeds: List[int] = field(default_factory=lambda: [0])
    rho: float = 0.5
    targets: List[Dict[str, Any]] = field(default_factory=list)
    subgrid_size: int = 8
    scheme: str = "heun"
    dist: Dict[str, Any] = field(default_factory=dict)
    workers: int = 1
    seed_chunk: int = 25

    @property
    def first_index(self) -> int:
        return default_burn_in(self.ratio) if self.burn_in is None else int(self.burn_in)

    @property
    def indices(self) -> List[int]:
        return list(range(self.first_index, self.n_windows + 1))

    @property
    def scales(self) -> List[float]:
        return [self.ratio ** i for i in self.indices]

    @property
    def dist_m(self) -> int:
        return int(self.dist.get("m", 64))

    def dist_options(self) -> DistOptions:
        opts = {k: v for k, v in self.dist.items() if k != "m"}
        unknown = sorted(set(opts) - set(DistOptions.__dataclass_fields__))
        if unknown:
            raise ConfigError(f"unknown key(s) {unknown}", field="lil.dist")
        return DistOptions.from_config(opts)

    def target_controls(self) -> List[Tuple[str, Control]]:
        out = []
        for a, spec in enumerate(self.targets):
            spec = dict(spec)
            target_id = str(spec.pop("id", f"target{a}"))
            out.append((target_id, Control.from_config(spec)))
        return out

    def validate(self) -> None:
        if not self.ratio > 1:
            raise ParameterRangeError(f"ratio c must be > 1, got {self.ratio!r}")
        if int(self.n_windows) != self.n_windows or self.n_windows < 1:
            raise ParameterRangeError(f"n_windows must be a positive integer, got {self.n_windows!r}")
        if not 0 < self.delta < 1:
            raise ParameterRangeError(f"delta must lie in (0, 1), got {self.delta!r}")
        i0 = self.first_index
        if i0 < 1 or not self.ratio ** (i0 - 1) > math.e:
            raise ParameterRangeError(f"burn-in i0={i0} needs c^(i0-1) > e")
        if i0 > self.n_windows:
            raise ParameterRangeError(f"burn-in i0={i0} exceeds the window count {self.n_windows}")
        if not self.seeds:
            raise ParameterRangeError("at least one seed is required")
        if self.subgrid_size < 1:
            raise ParameterRangeError(f"subgrid_size must be >= 1, got {self.subgrid_size!r}")
        if not self.rho > 0:
            raise ParameterRangeError(f"rho must be > 0, got {self.rho!r}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme '{self.scheme}'", field="simulate.scheme")
        dm = self.dist_m
        if dm < 1 or self.m % dm or self.m // dm < 4:
            raise ConfigError(f"output grid m={self.m} must be a multiple of 4 * dist.m (dist.m={dm})",
                              field="lil.dist.m")
        if self.seed_chunk < 1 or self.workers < 1:
            raise ParameterRangeError("seed_chunk and workers must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_experiment(cls, config: Dict[str, Any]) -> "LilConfig":
        """Build from a resolved experiment configuration."""
        lil = config["lil"]
        grid = config["grid"]
        runtime = config["runtime"]
        return cls(
            system=config["system"],
            limit=config.get("limit") or {},
            initial=config["initial"],
            ratio=float(grid["ratio"]),
            n_windows=int(grid["n_windows"]),
            delta=float(grid["delta"]),
            m=int(lil["m"]),
            burn_in=lil.get("burn_in"),
            seeds=[int(s) for s in runtime["seeds"]],
            rho=float(lil["rho"]),
            targets=list(lil.get("targets") or []),
            subgrid_size=int(lil["subgrid_size"]),
            scheme=config["simulate"]["scheme"],
            dist=dict(lil.get("dist") or {}),
            workers=int(runtime["workers"]),
            seed_chunk=int(runtime["seed_chunk"]),
        )
