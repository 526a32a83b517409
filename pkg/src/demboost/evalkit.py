"""Accuracy metrics, error maps, learning-curve files and run reports."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError
from .gbtree import TrainingTrace
from .raster import Grid, diff


def _residuals(residuals) -> np.ndarray:
    r = np.asarray(residuals, dtype=np.float64).reshape(-1)
    if r.size == 0:
        raise DomainError("rmse of an empty residual list")
    if not np.all(np.isfinite(r)):
        raise DomainError("residuals must be finite")
    return r


def rmse(residuals) -> float:
    r = _residuals(residuals)
    return math.sqrt(float(np.mean(r * r)))


def mae(residuals) -> float:
    return float(np.mean(np.abs(_residuals(residuals))))


def bias(residuals) -> float:
    return float(np.mean(_residuals(residuals)))


def improvement_factor(original_rmse: float, corrected_rmse: float) -> float:
    """Percent RMSE reduction; negative when the correction made things worse."""
    if not original_rmse > 0:
        raise DomainError(f"original RMSE must be > 0, got {original_rmse}")
    if not corrected_rmse >= 0:
        raise DomainError(f"corrected RMSE must be >= 0, got {corrected_rmse}")
    return 100.0 * (original_rmse - corrected_rmse) / original_rmse


def error_map(dem: Grid, ref: Grid) -> Grid:
    """Per-cell dem - ref, nodata where either is invalid."""
    return diff(dem, ref)


def grid_residuals(err: Grid, mask=None) -> np.ndarray:
    valid = err.valid_mask()
    if mask is not None:
        valid &= mask
    return err.data[valid]


@dataclass(frozen=True)
class AccuracyRecord:
    site: str
    dem: str
    original_rmse: float
    corrected_rmse: float | None
    improvement_pct: float | None
    n_points: int
    original_mae: float | None = None
    corrected_mae: float | None = None
    original_bias: float | None = None
    corrected_bias: float | None = None


def accuracy_record(site: str, dem: str, original_err, corrected_err=None) -> AccuracyRecord:
    """Before/after record from residual arrays on the same points.

    Without a corrected residual set, or when the original RMSE is zero, the
    improvement is undefined and the record carries the original side only.
    """
    o = _residuals(original_err)
    o_rmse = rmse(o)
    if corrected_err is None:
        return AccuracyRecord(site, dem, o_rmse, None, None, int(o.size), mae(o), None, bias(o), None)
    c = _residuals(corrected_err)
    if c.size != o.size:
        raise DomainError("original and corrected residuals cover different points")
    c_rmse = rmse(c)
    imp = improvement_factor(o_rmse, c_rmse) if o_rmse > 0 else None
    return AccuracyRecord(site, dem, o_rmse, c_rmse, imp, int(o.size), mae(o), mae(c), bias(o), bias(c))


@dataclass
class AccuracyReport:
    records: list

    def to_dict(self) -> dict:
        return {"records": [asdict(r) for r in self.records]}


def export_learning_curve(trace: TrainingTrace, path) -> None:
    if len(trace) == 0:
        raise DomainError("learning curve is empty")
    tmp = f"{os.fspath(path)}.part"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "train_rmse", "val_rmse"])
        for i, (a, b) in enumerate(zip(trace.train_rmse, trace.val_rmse), start=1):
            w.writerow([i, repr(float(a)), repr(float(b))])
    os.replace(tmp, path)


def read_learning_curve(path) -> TrainingTrace:
    tr, va = [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["iteration", "train_rmse", "val_rmse"]:
            raise DomainError(f"{path}: not a learning-curve file")
        for k, row in enumerate(reader, start=1):
            if int(row[0]) != k:
                raise DomainError(f"{path}: line {k + 1}: iterations must count up from 1")
            tr.append(float(row[1]))
            va.append(float(row[2]))
    return TrainingTrace(tuple(tr), tuple(va))


def write_json(doc, path) -> None:
    """Deterministic JSON (sorted keys, LF, trailing newline), written atomically."""
    tmp = f"{os.fspath(path)}.part"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_clean(doc), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    os.replace(tmp, path)


def _clean(x):
    # JSON has no nan/inf; report them as null.
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x
