"""
CSV reports: PSNR metrics, loss curves and crossover matrices.

Every table goes through pandas with 17 significant digits so that floats
re-parse to identical values.
"""

import logging
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FLOAT_FORMAT = "%.17g"
METRIC_COLUMNS = ["task", "setting", "L", "symmetry", "split", "psnr_mean"]
RESTORE_COLUMNS = ["image", "model", "psnr"]


def _write(df: pd.DataFrame, path: PathLike, index: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=index, float_format=FLOAT_FORMAT, encoding="utf-8")
    logger.info(f"Wrote {len(df)} rows to {path}")
    return path


def write_metrics_csv(rows: Iterable[Mapping], path: PathLike) -> Path:
    """Metrics table with columns task, setting, L, symmetry, split, psnr_mean."""
    df = pd.DataFrame(list(rows), columns=METRIC_COLUMNS)
    return _write(df, path)


def write_loss_csv(history: Sequence[float], path: PathLike) -> Path:
    """Upper-level loss per outer iteration."""
    df = pd.DataFrame({"iteration": np.arange(len(history)), "loss": np.asarray(history, dtype=float)})
    return _write(df, path)


def write_restore_csv(rows: Iterable[Mapping], path: PathLike) -> Path:
    """Per-image PSNR of a restoration run; missing ground truth leaves the cell empty."""
    df = pd.DataFrame(list(rows), columns=RESTORE_COLUMNS)
    return _write(df, path)


def write_crossover_csv(matrix: Mapping[str, Mapping[str, Optional[float]]], path: PathLike,
                        columns: Optional[Sequence[str]] = None) -> Path:
    """
    PSNR matrix with evaluation tasks as rows and learning settings as columns.

    Args:
        matrix: ``{evaluation task: {column: psnr or None}}``
        path: Target file
        columns: Column order (insertion order of the first row when omitted)
    """
    df = pd.DataFrame.from_dict(matrix, orient="index")
    if columns is not None:
        df = df.reindex(columns=list(columns))
    df.index.name = "task"
    return _write(df, path, index=True)


def read_csv(path: PathLike, **kwargs) -> pd.DataFrame:
    """Read back a report written by this module."""
    return pd.read_csv(path, **kwargs)
