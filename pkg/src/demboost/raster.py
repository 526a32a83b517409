"""Georeferenced grids: ESRI ASCII I/O, co-registration and cell arithmetic.

Grids are immutable. Cells are stored as a 2-D float64 array with the north
row first; invalid cells hold the header's ``nodata_value``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import AlignmentError, DomainError, GridParseError

DEFAULT_NODATA = -9999.0

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


@dataclass(frozen=True)
class GridHeader:
    ncols: int
    nrows: int
    xllcorner: float
    yllcorner: float
    cellsize: float
    nodata_value: float = DEFAULT_NODATA

    def __post_init__(self):
        if int(self.ncols) < 1 or int(self.nrows) < 1:
            raise DomainError(f"grid must have at least one row and column, got {self.nrows}x{self.ncols}")
        if not self.cellsize > 0:
            raise DomainError(f"cellsize must be positive, got {self.cellsize}")
        object.__setattr__(self, "ncols", int(self.ncols))
        object.__setattr__(self, "nrows", int(self.nrows))
        for key in ("xllcorner", "yllcorner", "cellsize", "nodata_value"):
            object.__setattr__(self, key, float(getattr(self, key)))

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    @property
    def extent(self):
        """(xmin, ymin, xmax, ymax) of the cell edges."""
        return (
            self.xllcorner,
            self.yllcorner,
            self.xllcorner + self.ncols * self.cellsize,
            self.yllcorner + self.nrows * self.cellsize,
        )

    def aligned_with(self, other: "GridHeader", rtol: float = 1e-9) -> bool:
        for key in _HEADER_KEYS:
            a = float(getattr(self, key))
            b = float(getattr(other, key))
            if not math.isclose(a, b, rel_tol=rtol):
                return False
        return True

    def cell_centers(self):
        """Map x of each column and map y of each row (north row first)."""
        xs = self.xllcorner + (np.arange(self.ncols) + 0.5) * self.cellsize
        ys = self.yllcorner + (self.nrows - np.arange(self.nrows) - 0.5) * self.cellsize
        return xs, ys


@dataclass(frozen=True, eq=False)
class Grid:
    header: GridHeader
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, order="C", copy=True)
        if arr.shape != self.header.shape:
            if arr.size != self.header.nrows * self.header.ncols:
                raise DomainError(
                    f"cell count {arr.size} does not match header {self.header.nrows}x{self.header.ncols}"
                )
            arr = arr.reshape(self.header.shape)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def nodata(self) -> float:
        return self.header.nodata_value

    @property
    def shape(self):
        return self.data.shape

    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.data) & (self.data != self.header.nodata_value)

    def masked(self) -> np.ndarray:
        """Copy of the cells with invalid cells set to NaN."""
        out = self.data.copy()
        out[~self.valid_mask()] = np.nan
        return out

    def with_data(self, values, invalid=None) -> "Grid":
        """New grid on the same header; NaN cells (and ``invalid``) become nodata."""
        values = np.array(values, dtype=np.float64)
        bad = ~np.isfinite(values)
        if invalid is not None:
            bad |= invalid
        values[bad] = self.header.nodata_value
        return Grid(self.header, values)

    def equals(self, other: "Grid") -> bool:
        return self.header == other.header and np.array_equal(self.data, other.data)


def _fmt(value: float) -> str:
    return "%.17g" % value


def read_ascii_grid(path) -> Grid:
    """Parse an ESRI ASCII grid.

    Header keys are case-insensitive and may come in any order;
    ``NODATA_VALUE`` is optional (default -9999). ``XLLCENTER``/``YLLCENTER``
    are accepted and converted to corners.
    """
    header: dict[str, str] = {}
    header_lines: dict[str, int] = {}
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    lineno = 0
    while lineno < len(lines):
        text = lines[lineno].strip()
        if not text:
            lineno += 1
            continue
        tokens = text.split()
        if not tokens[0][0].isalpha() or not _not_number(tokens[0]):
            break
        key = tokens[0].lower()
        if key not in _HEADER_KEYS and key not in ("xllcenter", "yllcenter"):
            raise GridParseError(f"{path}: line {lineno + 1}: unknown header key {tokens[0]!r}")
        if len(tokens) != 2:
            raise GridParseError(f"{path}: line {lineno + 1}: header entry must be 'KEY value'")
        header[key] = tokens[1]
        header_lines[key] = lineno + 1
        lineno += 1

    for key in ("ncols", "nrows", "cellsize"):
        if key not in header:
            raise GridParseError(f"{path}: missing header key {key.upper()}")
    try:
        ncols = int(header["ncols"])
        nrows = int(header["nrows"])
        cellsize = float(header["cellsize"])
        nodata = float(header.get("nodata_value", DEFAULT_NODATA))
        if "xllcorner" in header:
            xll = float(header["xllcorner"])
        elif "xllcenter" in header:
            xll = float(header["xllcenter"]) - cellsize / 2
        else:
            raise GridParseError(f"{path}: missing header key XLLCORNER")
        if "yllcorner" in header:
            yll = float(header["yllcorner"])
        elif "yllcenter" in header:
            yll = float(header["yllcenter"]) - cellsize / 2
        else:
            raise GridParseError(f"{path}: missing header key YLLCORNER")
    except ValueError as exc:
        bad = next((k for k in header if _not_number(header[k])), None)
        where = f"line {header_lines[bad]}: " if bad else ""
        raise GridParseError(f"{path}: {where}malformed header value ({exc})") from None
    try:
        hdr = GridHeader(ncols, nrows, xll, yll, cellsize, nodata)
    except DomainError as exc:
        raise GridParseError(f"{path}: {exc}") from None

    data_line = 0
    while lineno < len(lines):
        text = lines[lineno].strip()
        lineno += 1
        if not text:
            continue
        data_line += 1
        tokens = text.split()
        if len(tokens) != ncols:
            raise GridParseError(
                f"{path}: data line {data_line} (file line {lineno}): expected {ncols} values, found {len(tokens)}"
            )
        try:
            rows.append([float(tok) for tok in tokens])
        except ValueError:
            bad = next(tok for tok in tokens if _not_number(tok))
            raise GridParseError(
                f"{path}: data line {data_line} (file line {lineno}): non-numeric value {bad!r}"
            ) from None
    if len(rows) != nrows:
        raise GridParseError(f"{path}: expected {nrows} data rows, found {len(rows)}")
    return Grid(hdr, np.array(rows, dtype=np.float64).reshape(nrows, ncols))


def _not_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return True
    return False


def write_ascii_grid(grid: Grid, path) -> None:
    """Write ``grid`` as ESRI ASCII with 17 significant digits (bit-exact round trip)."""
    h = grid.header
    data = grid.data
    invalid = ~grid.valid_mask()
    nd = _fmt(h.nodata_value)
    lines = [
        f"NCOLS {h.ncols}",
        f"NROWS {h.nrows}",
        f"XLLCORNER {_fmt(h.xllcorner)}",
        f"YLLCORNER {_fmt(h.yllcorner)}",
        f"CELLSIZE {_fmt(h.cellsize)}",
        f"NODATA_VALUE {nd}",
    ]
    for r in range(h.nrows):
        row = data[r]
        bad = invalid[r]
        lines.append(" ".join(nd if bad[c] else _fmt(row[c]) for c in range(h.ncols)))
    tmp = f"{os.fspath(path)}.part"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")
    os.replace(tmp, path)


def _require_aligned(a: GridHeader, b: GridHeader, what="grids"):
    if not a.aligned_with(b):
        raise AlignmentError(f"{what} are not aligned: {a} vs {b}")


def resample(src: Grid, target: GridHeader, method: str = "bilinear") -> Grid:
    """Sample ``src`` at the cell centres of ``target``.

    Bilinear interpolation uses the four surrounding cell centres; any
    contributing (non-zero weight) nodata cell gives nodata. Centres outside
    the source extent give nodata.
    """
    if method not in ("nearest", "bilinear"):
        raise DomainError(f"unknown resampling method {method!r}")
    sx0, sy0, sx1, sy1 = src.header.extent
    tx0, ty0, tx1, ty1 = target.extent
    if tx0 >= sx1 or tx1 <= sx0 or ty0 >= sy1 or ty1 <= sy0:
        raise DomainError("target grid does not overlap the source grid")

    sh = src.header
    xs, ys = target.cell_centers()
    # fractional source indices of target centres (0 == first cell centre)
    u = (xs - sh.xllcorner) / sh.cellsize - 0.5
    v = (sh.yllcorner + sh.nrows * sh.cellsize - ys) / sh.cellsize - 0.5
    inside_u = (u >= -0.5) & (u < sh.ncols - 0.5)
    inside_v = (v >= -0.5) & (v < sh.nrows - 0.5)
    values = src.masked()

    if method == "nearest":
        ci = np.clip(np.floor(u + 0.5).astype(np.int64), 0, sh.ncols - 1)
        ri = np.clip(np.floor(v + 0.5).astype(np.int64), 0, sh.nrows - 1)
        out = values[np.ix_(ri, ci)]
    else:
        uc = np.clip(u, 0.0, sh.ncols - 1)
        vc = np.clip(v, 0.0, sh.nrows - 1)
        c0 = np.floor(uc).astype(np.int64)
        r0 = np.floor(vc).astype(np.int64)
        fx = uc - c0
        fy = vc - r0
        c1 = np.minimum(c0 + 1, sh.ncols - 1)
        r1 = np.minimum(r0 + 1, sh.nrows - 1)
        fx2 = fx[None, :]
        fy2 = fy[:, None]
        v00 = values[np.ix_(r0, c0)]
        v01 = values[np.ix_(r0, c1)]
        v10 = values[np.ix_(r1, c0)]
        v11 = values[np.ix_(r1, c1)]
        # zero-weight neighbours must not poison the result with NaN
        wx = np.broadcast_to(fx2 > 0, v00.shape)
        wy = np.broadcast_to(fy2 > 0, v00.shape)
        v01 = np.where(wx, v01, v00)
        v10 = np.where(wy, v10, v00)
        v11 = np.where(wx & wy, v11, np.where(wx, v01, v10))
        top = v00 + fx2 * (v01 - v00)
        bottom = v10 + fx2 * (v11 - v10)
        out = top + fy2 * (bottom - top)

    out = np.array(out, dtype=np.float64)
    out[~(inside_v[:, None] & inside_u[None, :])] = np.nan
    out[~np.isfinite(out)] = target.nodata_value
    return Grid(target, out)


def apply_vertical_offset(grid: Grid, offset: float) -> Grid:
    if offset == 0:
        return grid
    valid = grid.valid_mask()
    out = grid.data.copy()
    out[valid] += offset
    return Grid(grid.header, out)


def diff(global_dem: Grid, ref_dem: Grid) -> Grid:
    """Per-cell elevation error: global DEM minus reference DEM."""
    _require_aligned(global_dem.header, ref_dem.header, "DEM and reference")
    valid = global_dem.valid_mask() & ref_dem.valid_mask()
    out = np.full(global_dem.shape, global_dem.nodata)
    out[valid] = global_dem.data[valid] - ref_dem.data[valid]
    return Grid(global_dem.header, out)


def negate(grid: Grid) -> Grid:
    valid = grid.valid_mask()
    out = grid.data.copy()
    out[valid] = -out[valid]
    return Grid(grid.header, out)


def require_aligned(grids, what="grids"):
    grids = list(grids)
    for g in grids[1:]:
        _require_aligned(grids[0].header, g.header, what)


def subset(grid: Grid, col0: int, row0: int, ncols: int, nrows: int) -> Grid:
    """Window of ``grid`` (row0 counted from the north edge)."""
    h = grid.header
    if col0 < 0 or row0 < 0 or col0 + ncols > h.ncols or row0 + nrows > h.nrows:
        raise DomainError(f"window {col0},{row0},{ncols}x{nrows} exceeds grid {h.ncols}x{h.nrows}")
    hdr = replace(
        h,
        ncols=ncols,
        nrows=nrows,
        xllcorner=h.xllcorner + col0 * h.cellsize,
        yllcorner=h.yllcorner + (h.nrows - row0 - nrows) * h.cellsize,
    )
    return Grid(hdr, grid.data[row0 : row0 + nrows, col0 : col0 + ncols])
