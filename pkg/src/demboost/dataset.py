"""Per-cell feature tables, random splits and CSV exchange."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EmptyDatasetError, TableParseError
from .raster import Grid, require_aligned

FEATURE_NAMES = (
    "elevation",
    "urban",
    "slope",
    "aspect",
    "roughness",
    "tpi",
    "tri",
    "tst",
    "vrm",
    "forest_pct",
    "bare_pct",
)
N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True, eq=False)
class FeatureTable:
    """Rows of (col, row, features, target). ``X`` is (n, 11) float64."""

    X: np.ndarray
    y: np.ndarray
    col: np.ndarray
    row: np.ndarray
    feature_names: tuple = FEATURE_NAMES

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, order="C").reshape(-1, len(self.feature_names))
        y = np.array(self.y, dtype=np.float64).reshape(-1)
        col = np.array(self.col, dtype=np.int64).reshape(-1)
        row = np.array(self.row, dtype=np.int64).reshape(-1)
        if not (len(X) == len(y) == len(col) == len(row)):
            raise DomainError("feature table columns have different lengths")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise DomainError("feature table holds non-finite values")
        if tuple(self.feature_names) == FEATURE_NAMES and len(X):
            _check_domains(X)
        for arr in (X, y, col, row):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "col", col)
        object.__setattr__(self, "row", row)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self):
        return len(self.y)

    def take(self, idx) -> "FeatureTable":
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureTable(self.X[idx], self.y[idx], self.col[idx], self.row[idx], self.feature_names)

    def equals(self, other: "FeatureTable") -> bool:
        return (
            self.feature_names == other.feature_names
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.col, other.col)
            and np.array_equal(self.row, other.row)
        )

    @classmethod
    def empty(cls, feature_names=FEATURE_NAMES):
        k = len(feature_names)
        return cls(np.empty((0, k)), np.empty(0), np.empty(0, np.int64), np.empty(0, np.int64), feature_names)


def _check_domains(X):
    urban = X[:, FEATURE_NAMES.index("urban")]
    if not np.all((urban == 0.0) | (urban == 1.0)):
        raise DomainError("urban must be 0 or 1")
    for name in ("forest_pct", "bare_pct"):
        v = X[:, FEATURE_NAMES.index(name)]
        if np.any(v < 0.0) or np.any(v > 100.0):
            raise DomainError(f"{name} must lie in [0, 100]")


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    val_fraction_of_train: float = 0.125
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.test_fraction < 1.0:
            raise DomainError(f"test_fraction must be in [0, 1), got {self.test_fraction}")
        if not 0.0 <= self.val_fraction_of_train < 1.0:
            raise DomainError(f"val_fraction_of_train must be in [0, 1), got {self.val_fraction_of_train}")


def feature_stack(feature_grids) -> list[Grid]:
    """Order a mapping name->Grid (or a sequence) by ``FEATURE_NAMES``."""
    if isinstance(feature_grids, dict):
        missing = [n for n in FEATURE_NAMES if n not in feature_grids]
        if missing:
            raise DomainError(f"missing feature grids: {', '.join(missing)}")
        return [feature_grids[n] for n in FEATURE_NAMES]
    grids = list(feature_grids)
    if len(grids) != N_FEATURES:
        raise DomainError(f"expected {N_FEATURES} feature grids, got {len(grids)}")
    return grids


def valid_cells(feature_grids, error_grid: Grid | None = None, stride: int = 1) -> np.ndarray:
    """Boolean mask of cells valid in every layer, thinned to every ``stride``-th row and column."""
    grids = feature_stack(feature_grids)
    if error_grid is not None:
        grids = grids + [error_grid]
    require_aligned(grids, "feature and error grids")
    mask = np.ones(grids[0].shape, dtype=bool)
    for g in grids:
        mask &= g.valid_mask()
    if stride > 1:
        keep = np.zeros_like(mask)
        keep[::stride, ::stride] = True
        mask &= keep
    return mask


def assemble(feature_grids, error_grid: Grid, stride: int = 1) -> FeatureTable:
    """One row per cell valid in all 12 layers, in row-major scan order."""
    if int(stride) < 1:
        raise DomainError(f"stride must be >= 1, got {stride}")
    grids = feature_stack(feature_grids)
    mask = valid_cells(grids, error_grid, int(stride))
    rows, cols = np.nonzero(mask)
    if len(rows) == 0:
        raise EmptyDatasetError("no cell is valid in every layer")
    X = np.column_stack([g.data[rows, cols] for g in grids])
    y = error_grid.data[rows, cols]
    return FeatureTable(X, y, cols, rows)


def feature_matrix(feature_grids):
    """(n_cells, 11) matrix over all cells plus the all-valid mask."""
    grids = feature_stack(feature_grids)
    require_aligned(grids, "feature grids")
    mask = np.ones(grids[0].shape, dtype=bool)
    for g in grids:
        mask &= g.valid_mask()
    X = np.stack([g.data.reshape(-1) for g in grids], axis=1)
    return X, mask


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_sizes(n: int, spec: SplitSpec):
    n_test = _round_half_up(n * spec.test_fraction)
    n_val = _round_half_up((n - n_test) * spec.val_fraction_of_train)
    return n - n_test - n_val, n_val, n_test


def split(table: FeatureTable, spec: SplitSpec):
    """Seeded uniform random partition into (train, val, test)."""
    n = len(table)
    if n == 0:
        raise EmptyDatasetError("cannot split an empty table")
    n_train, n_val, n_test = split_sizes(n, spec)
    perm = np.random.Generator(np.random.PCG64(spec.seed)).permutation(n)
    test_idx = np.sort(perm[:n_test])
    val_idx = np.sort(perm[n_test : n_test + n_val])
    train_idx = np.sort(perm[n_test + n_val :])
    return table.take(train_idx), table.take(val_idx), table.take(test_idx)


def _fmt(v: float) -> str:
    return "%.17g" % v


def export_csv(table: FeatureTable, path) -> None:
    header = list(table.feature_names) + ["target", "col", "row"]
    tmp = f"{os.fspath(path)}.part"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(table)):
            w.writerow([_fmt(v) for v in table.X[i]] + [_fmt(table.y[i]), int(table.col[i]), int(table.row[i])])
    os.replace(tmp, path)


def import_csv(path) -> FeatureTable:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TableParseError(f"{path}: line 1: missing header row") from None
        expected = set(FEATURE_NAMES) | {"target", "col", "row"}
        unknown = [h for h in header if h not in expected]
        if unknown:
            raise TableParseError(f"{path}: line 1: unknown column {unknown[0]!r}")
        missing = [h for h in expected if h not in header]
        if missing:
            raise TableParseError(f"{path}: line 1: missing column {sorted(missing)[0]!r}")
        pos = {h: i for i, h in enumerate(header)}
        feat_idx = [pos[n] for n in FEATURE_NAMES]
        X, y, cols, rows = [], [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise TableParseError(f"{path}: line {lineno}: expected {len(header)} values, found {len(rec)}")
            if any(v.strip() == "" for v in rec):
                raise TableParseError(f"{path}: line {lineno}: missing value")
            try:
                X.append([float(rec[i]) for i in feat_idx])
                y.append(float(rec[pos["target"]]))
                cols.append(int(rec[pos["col"]]))
                rows.append(int(rec[pos["row"]]))
            except ValueError as exc:
                raise TableParseError(f"{path}: line {lineno}: {exc}") from None
    if not X:
        return FeatureTable.empty()
    try:
        return FeatureTable(X, y, cols, rows)
    except DomainError as exc:
        raise TableParseError(f"{path}: {exc}") from None
