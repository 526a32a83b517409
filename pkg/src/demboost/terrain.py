"""Terrain predictors derived from an elevation grid.

All operators work on 3x3 or (2r+1)^2 windows with clamped (edge-replicated)
indices. A window that touches an invalid cell produces nodata.

Conventions
-----------
slope, aspect
    Horn (1981) weighted differences. Aspect is the downslope azimuth in
    degrees clockwise from north; flat cells get ``FLAT_ASPECT`` (-1).
roughness
    max - min of the 3x3 window.
tpi
    centre minus the mean of the other cells of the (2r+1)^2 window.
tri
    mean absolute difference between the centre and its 8 neighbours.
tst
    fraction of window cells deviating from their own 3x3 median by more
    than ``flag_threshold``.
vrm
    1 - |sum of unit normals| / n over the window (Sappington et al. 2007).
"""
from dataclasses import dataclass

import numpy as np

from . import _jit
from . import _terrain_kernels as K
from .errors import DomainError
from .raster import Grid

FLAT_ASPECT = -1.0

DEFAULT_TPI_RADIUS = 1
DEFAULT_TST_RADIUS = 10
DEFAULT_TST_THRESHOLD = 1.0
DEFAULT_VRM_RADIUS = 1


@dataclass(frozen=True)
class WindowSpec:
    radius: int = 1

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise DomainError(f"window radius must be an integer >= 1, got {self.radius}")

    @property
    def size(self):
        return 2 * self.radius + 1


def _radius(w):
    if isinstance(w, WindowSpec):
        return int(w.radius)
    return int(WindowSpec(int(w)).radius)


def _pick(name):
    return getattr(K, f"{name}_nb" if _jit.use_numba() else f"{name}_np")


def _surface(dem: Grid) -> np.ndarray:
    return np.ascontiguousarray(dem.masked())


def horn_gradient(dem: Grid):
    """(dz/dx east, dz/dy north) arrays, NaN where undefined."""
    return _pick("horn")(_surface(dem), float(dem.header.cellsize))


def _slope_aspect(dem: Grid):
    gx, gy = horn_gradient(dem)
    return _pick("slope_aspect")(gx, gy)


def slope(dem: Grid) -> Grid:
    """Slope in degrees, [0, 90]."""
    s, _ = _slope_aspect(dem)
    return dem.with_data(s)


def aspect(dem: Grid) -> Grid:
    """Downslope azimuth in degrees [0, 360); -1 on flat cells."""
    _, a = _slope_aspect(dem)
    return dem.with_data(a)


def roughness(dem: Grid) -> Grid:
    return dem.with_data(_pick("roughness")(_surface(dem)))


def tpi(dem: Grid, w=DEFAULT_TPI_RADIUS) -> Grid:
    return dem.with_data(_pick("tpi")(_surface(dem), _radius(w)))


def tri(dem: Grid) -> Grid:
    return dem.with_data(_pick("tri")(_surface(dem)))


def tst(dem: Grid, w=DEFAULT_TST_RADIUS, flag_threshold: float = DEFAULT_TST_THRESHOLD) -> Grid:
    if not flag_threshold > 0:
        raise DomainError(f"flag_threshold must be > 0, got {flag_threshold}")
    z = _surface(dem)
    med = _pick("median3")(z)
    with np.errstate(invalid="ignore"):
        flags = (np.abs(z - med) > flag_threshold).astype(np.float64)
    flags[np.isnan(med) | np.isnan(z)] = np.nan
    return dem.with_data(_pick("window_mean")(flags, _radius(w)))


def vrm(dem: Grid, w=DEFAULT_VRM_RADIUS) -> Grid:
    s, a = _slope_aspect(dem)
    return dem.with_data(_pick("vrm")(s, a, _radius(w)))


TERRAIN_FEATURES = ("slope", "aspect", "roughness", "tpi", "tri", "tst", "vrm")


def derive_all(
    dem: Grid,
    tpi_radius=DEFAULT_TPI_RADIUS,
    tst_radius=DEFAULT_TST_RADIUS,
    tst_threshold=DEFAULT_TST_THRESHOLD,
    vrm_radius=DEFAULT_VRM_RADIUS,
) -> dict:
    """All seven terrain predictors keyed by name."""
    s, a = _slope_aspect(dem)
    return {
        "slope": dem.with_data(s),
        "aspect": dem.with_data(a),
        "roughness": roughness(dem),
        "tpi": tpi(dem, tpi_radius),
        "tri": tri(dem),
        "tst": tst(dem, tst_radius, tst_threshold),
        "vrm": dem.with_data(_pick("vrm")(s, a, _radius(vrm_radius))),
    }
