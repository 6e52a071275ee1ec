"""
Harness report: the per-(seed, i) table and the aggregates derived from it.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from ..utils.errors import ParameterRangeError
from ..utils.serialization import write_csv, write_json

COLUMNS = ["seed", "i", "u", "dist_theta", "endpoint_norm", "gamma", "target_id", "dist_target"]


class LilReport:
    """
    Per-(seed, i[, target]) measurements of the rescaled solutions.

    Every aggregate is recomputed from `frame`, so a report read back from
    its CSV yields the same summary.
    """
    def __init__(self, frame: pd.DataFrame, rho: float = 0.5):
        self.logger = logging.getLogger(__name__)
        missing = [c for c in COLUMNS if c not in frame.columns]
        if missing:
            raise ParameterRangeError(f"report table misses columns {missing}")
        frame = frame[COLUMNS].copy()
        frame["target_id"] = frame["target_id"].fillna("").astype(str)
        self.frame = frame.sort_values(["seed", "i", "target_id"], kind="mergesort").reset_index(drop=True)
        self.rho = float(rho)
        for col in ("dist_theta", "dist_target", "gamma", "endpoint_norm"):
            if bool((self.frame[col] < 0).any()):
                raise ParameterRangeError(f"negative values in report column '{col}'")

    @classmethod
    def combine(cls, reports: Iterable["LilReport"]) -> "LilReport":
        """Merge reports on disjoint seed sets; order of the inputs does not matter."""
        reports = list(reports)
        if not reports:
            raise ParameterRangeError("nothing to combine")
        return cls(pd.concat([r.frame for r in reports], ignore_index=True), rho=reports[0].rho)

    @property
    def seeds(self) -> List[int]:
        return sorted(int(s) for s in self.frame["seed"].unique())

    @property
    def target_ids(self) -> List[str]:
        return sorted(t for t in self.frame["target_id"].unique() if t)

    def _scale_rows(self) -> pd.DataFrame:
        """One row per (seed, i), independent of how many targets were measured."""
        return self.frame.drop_duplicates(["seed", "i"])[["seed", "i", "u", "dist_theta",
                                                          "endpoint_norm", "gamma"]]

    def per_index(self) -> pd.DataFrame:
        """Medians across seeds and exceedance counts over rho, per window index."""
        rows = self._scale_rows()
        grouped = rows.groupby("i", sort=True)
        out = pd.DataFrame({
            "u": grouped["u"].first(),
            "median_dist": grouped["dist_theta"].median(),
            "min_dist": grouped["dist_theta"].min(),
            "median_endpoint": grouped["endpoint_norm"].median(),
            "max_endpoint": grouped["endpoint_norm"].max(),
            "median_gamma": grouped["gamma"].median(),
            "exceedances": grouped["dist_theta"].apply(lambda s: int((s >= self.rho).sum())),
        })
        return out.reset_index()

    def running_minima(self) -> pd.DataFrame:
        rows = self._scale_rows().sort_values(["seed", "i"])
        out = rows[["seed", "i"]].copy()
        out["running_min_dist"] = rows.groupby("seed")["dist_theta"].cummin()
        return out.reset_index(drop=True)

    def target_summary(self) -> pd.DataFrame:
        """Per (seed, target): smallest distance over windows and the count of windows within rho."""
        hits = self.frame[self.frame["target_id"] != ""]
        if hits.empty:
            return pd.DataFrame(columns=["seed", "target_id", "min_dist", "hits"])
        grouped = hits.groupby(["seed", "target_id"], sort=True)["dist_target"]
        out = pd.DataFrame({
            "min_dist": grouped.min(),
            "hits": grouped.apply(lambda s: int((s < self.rho).sum())),
        })
        return out.reset_index()

    def plot_series(self) -> pd.DataFrame:
        """(i, median dist) series for external plotting."""
        return self.per_index()[["i", "median_dist"]]

    def pooled_median(self, lo: int, hi: int) -> float:
        """Median of dist_theta pooled over seeds and windows lo..hi."""
        rows = self._scale_rows()
        sel = rows[(rows["i"] >= lo) & (rows["i"] <= hi)]["dist_theta"].dropna()
        return float(sel.median()) if len(sel) else float("nan")

    def summary(self) -> Dict[str, Any]:
        rows = self._scale_rows()
        per_i = self.per_index()
        dist = rows["dist_theta"].dropna()
        out: Dict[str, Any] = {
            "rho": self.rho,
            "n_seeds": len(self.seeds),
            "first_index": int(rows["i"].min()),
            "last_index": int(rows["i"].max()),
            "exceedances_total": int((dist >= self.rho).sum()),
            "max_endpoint_norm": float(rows["endpoint_norm"].max()),
            "median_gamma": float(rows["gamma"].median()),
            "median_dist_by_index": {str(int(i)): float(v) for i, v in zip(per_i["i"], per_i["median_dist"])},
        }
        if len(dist):
            out["median_dist"] = float(dist.median())
            out["min_dist"] = float(dist.min())
            minima = rows.groupby("seed")["dist_theta"].min()
            out["median_seed_minimum"] = float(minima.median())
        if self.target_ids:
            targets = self.target_summary()
            out["targets"] = {
                t: {
                    "median_min_dist": float(part["min_dist"].median()),
                    "fraction_within_rho": float((part["min_dist"] < self.rho).mean()),
                    "total_hits": int(part["hits"].sum()),
                }
                for t, part in targets.groupby("target_id", sort=True)
            }
        return out

    def write(self, out_dir: str, prefix: str = "lil") -> Dict[str, Path]:
        """Write the table, the summary and the plot series; returns the paths."""
        out = Path(out_dir)
        files = {
            "table": write_csv(out / f"{prefix}_report.csv", self.frame),
            "summary": write_json(out / f"{prefix}_summary.json", self.summary()),
            "plot": write_csv(out / f"{prefix}_plot.csv", self.plot_series()),
        }
        if self.target_ids:
            files["targets"] = write_csv(out / f"{prefix}_targets.csv", self.target_summary())
        self.logger.info(f"report written to {out} ({len(self.frame)} rows)")
        return files

    @classmethod
    def read_csv(cls, path: str, rho: float = 0.5) -> "LilReport":
        frame = pd.read_csv(path, keep_default_na=True, dtype={"target_id": str})
        return cls(frame, rho=rho)

    def __len__(self) -> int:
        return len(self.frame)

    def column(self, name: str, target_id: Optional[str] = None) -> np.ndarray:
        frame = self.frame if target_id is None else self.frame[self.frame["target_id"] == target_id]
        return frame[name].to_numpy()
