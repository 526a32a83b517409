"""Seeded synthetic scenes: reference terrain, land cover and a corrupted DEM.

The corruption is built from the same drivers the predictors can see:

    corrupted = truth
                + building_height * urban
                + canopy_offset_per_pct * forest_pct
                + slope_noise_coeff * slope(truth) * N(0, 1)
                + N(0, white_noise_sd)

so the per-cell error is a learnable function of urban cover, forest cover
and slope plus irreducible noise.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import terrain
from .errors import DomainError
from .raster import Grid, GridHeader


@dataclass(frozen=True)
class SceneConfig:
    size: int = 512
    cellsize: float = 30.0
    seed: int = 0
    building_density: float = 0.2
    building_height_mean: float = 6.0
    building_height_sd: float = 2.0
    forest_density: float = 0.3
    canopy_offset_per_pct: float = 0.05
    slope_noise_coeff: float = 0.05
    white_noise_sd: float = 0.5
    base_terrain_amplitude: float = 150.0
    base_elevation: float = 20.0
    n_bumps: int = 40
    building_min_cells: int = 2
    building_max_cells: int = 8
    xllcorner: float = 260000.0
    yllcorner: float = 6230000.0

    def __post_init__(self):
        if int(self.size) < 1:
            raise DomainError(f"scene size must be >= 1, got {self.size}")
        if not self.cellsize > 0:
            raise DomainError("cellsize must be positive")
        for key in ("building_density", "forest_density"):
            v = getattr(self, key)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{key} must be in [0, 1], got {v}")
        for key in ("building_height_sd", "white_noise_sd", "slope_noise_coeff", "base_terrain_amplitude"):
            if getattr(self, key) < 0:
                raise DomainError(f"{key} must be >= 0")
        if not 1 <= self.building_min_cells <= self.building_max_cells:
            raise DomainError("building size bounds must satisfy 1 <= min <= max")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown scene setting(s): {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Scene:
    truth: Grid
    corrupted: Grid
    urban: Grid
    forest_pct: Grid
    bare_pct: Grid
    n_buildings: int = 0

    def grids(self) -> dict:
        return {
            "truth": self.truth,
            "corrupted": self.corrupted,
            "urban": self.urban,
            "forest_pct": self.forest_pct,
            "bare_pct": self.bare_pct,
        }


def _bump_field(rng, n, n_bumps, signed=True):
    """Sum of separable Gaussian bumps on an n x n grid, rescaled to [0, 1]."""
    centers = rng.uniform(0, n, size=(n_bumps, 2))
    sigmas = rng.uniform(n / 20.0, n / 5.0, size=n_bumps)
    amps = rng.normal(0.0, 1.0, size=n_bumps) if signed else rng.uniform(0.2, 1.0, size=n_bumps)
    idx = np.arange(n) + 0.5
    field = np.zeros((n, n))
    for (cr, cc), s, a in zip(centers, sigmas, amps):
        gr = np.exp(-0.5 * ((idx - cr) / s) ** 2)
        gc = np.exp(-0.5 * ((idx - cc) / s) ** 2)
        field += a * np.outer(gr, gc)
    lo, hi = field.min(), field.max()
    if hi > lo:
        return (field - lo) / (hi - lo)
    return np.zeros_like(field)


def _buildings(rng, n, density, hmean, hsd, wmin, wmax):
    heights = np.zeros((n, n))
    urban = np.zeros((n, n), dtype=bool)
    target = density * n * n
    covered = 0
    count = 0
    attempts = 0
    max_attempts = 50 * n * n
    while covered < target and attempts < max_attempts:
        attempts += 1
        h, w = rng.integers(wmin, wmax + 1, size=2)
        h, w = min(h, n), min(w, n)
        r0 = rng.integers(0, n - h + 1)
        c0 = rng.integers(0, n - w + 1)
        height = max(rng.normal(hmean, hsd), 0.0)
        covered += int(np.count_nonzero(~urban[r0 : r0 + h, c0 : c0 + w]))
        urban[r0 : r0 + h, c0 : c0 + w] = True
        heights[r0 : r0 + h, c0 : c0 + w] = height
        count += 1
    return urban, heights, count


def generate_scene(config: SceneConfig = SceneConfig()) -> Scene:
    """Build truth, corrupted DEM and land-cover layers; deterministic per seed."""
    n = int(config.size)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    header = GridHeader(n, n, config.xllcorner, config.yllcorner, config.cellsize)

    relief = _bump_field(rng, n, config.n_bumps, signed=True)
    truth = config.base_elevation + config.base_terrain_amplitude * relief

    urban, heights, n_buildings = _buildings(
        rng,
        n,
        config.building_density,
        config.building_height_mean,
        config.building_height_sd,
        config.building_min_cells,
        config.building_max_cells,
    )

    cover = _bump_field(rng, n, max(config.n_bumps // 2, 1), signed=False)
    forest = np.zeros((n, n))
    if config.forest_density > 0:
        open_cells = ~urban
        if open_cells.any():
            q = np.quantile(cover[open_cells], 1.0 - config.forest_density)
            span = max(1.0 - q, 1e-12)
            forest = 100.0 * np.clip((cover - q) / span, 0.0, 1.0)
            forest[cover <= q] = 0.0
    forest[urban] = 0.0

    ground = _bump_field(rng, n, max(config.n_bumps // 2, 1), signed=False)
    bare = (100.0 - forest) * ground

    slope_deg = terrain.slope(Grid(header, truth)).data
    slope_noise = config.slope_noise_coeff * slope_deg * rng.standard_normal((n, n))
    white = config.white_noise_sd * rng.standard_normal((n, n))

    corrupted = truth + heights * urban + config.canopy_offset_per_pct * forest + slope_noise + white

    return Scene(
        truth=Grid(header, truth),
        corrupted=Grid(header, corrupted),
        urban=Grid(header, urban.astype(np.float64)),
        forest_pct=Grid(header, forest),
        bare_pct=Grid(header, bare),
        n_buildings=n_buildings,
    )
