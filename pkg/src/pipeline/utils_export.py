import json
import logging
import os
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

DEFAULT_FLOAT_FORMAT = "%.12e"
TARGET_TIME_SLICES = 100


def _to_builtin(value):
    if isinstance(value, dict):
        return {str(k): _to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_builtin(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        value = float(value)
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    if isinstance(value, Path):
        return str(value)
    return value


def save_json(data: dict, path) -> Path:
    """Sorted-key JSON so that identical runs give identical files."""
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_to_builtin(data), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Saved {path}")
    return path


def save_csv(df: pd.DataFrame, path, float_format: str = DEFAULT_FLOAT_FORMAT) -> Path:
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    df.to_csv(path, index=False, float_format=float_format, lineterminator="\n")
    logger.info(f"Saved {path} ({len(df)} rows)")
    return path


def resolve_time_stride(stride, nt: int) -> int:
    """'auto' keeps about a hundred time slices of a solution field."""
    if stride in (None, "auto"):
        return max(1, nt // TARGET_TIME_SLICES)
    return max(1, int(stride))
