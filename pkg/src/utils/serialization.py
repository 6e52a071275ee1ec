"""
Deterministic writers for tables, summaries and record streams.
"""
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, Union

import numpy as np
import pandas as pd

PathLike = Union[str, Path]


def to_jsonable(obj: Any) -> Any:
    """Convert numpy and non-finite values into plain JSON values.

    +inf -> "inf", -inf -> "-inf", NaN -> None.
    """
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return obj


def from_json_float(value: Any) -> float:
    if value is None:
        return float("nan")
    if value == "inf":
        return float("inf")
    if value == "-inf":
        return float("-inf")
    return float(value)


def dumps_json(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path: PathLike, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(obj))
    return path


def write_jsonl(path: PathLike, records: Iterable[Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(to_jsonable(r), sort_keys=True) for r in records]
    path.write_text("".join(line + "\n" for line in lines))
    return path


def read_jsonl(path: PathLike) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_csv(path: PathLike, frame: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path
