import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from demboost import _jit, terrain
from demboost.errors import DomainError
from demboost.raster import Grid, GridHeader

ORACLE_TOL = 1e-12


def as_grid(z, cellsize=30.0):
    z = np.asarray(z, dtype=float)
    return Grid(GridHeader(z.shape[1], z.shape[0], 0.0, 0.0, cellsize), np.where(np.isnan(z), -9999.0, z))


def plane(n, east, north, cellsize=30.0):
    """z rising by ``east`` per metre eastwards and ``north`` per metre northwards."""
    c = np.arange(n) * cellsize
    # row 0 is the northern edge
    return east * c[None, :] + north * c[::-1, None] + 100.0


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    if request.param == "numba" and not _jit.HAVE_NUMBA:
        pytest.skip("numba not installed")
    before = _jit.backend()
    _jit.set_backend(request.param)
    yield request.param
    _jit.set_backend(before)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_matches_oracle(backend, seed):
    z = oracles.random_surface(seed, n=30)
    got = terrain.derive_all(as_grid(z))
    want = oracles.all_terrain(z)
    for name in terrain.TERRAIN_FEATURES:
        assert oracles.max_abs_diff(got[name].masked(), want[name]) <= ORACLE_TOL, name


def test_matches_oracle_with_nodata(backend):
    z = oracles.random_surface(7, n=30, nan_cells=6)
    got = terrain.derive_all(as_grid(z))
    want = oracles.all_terrain(z)
    for name in terrain.TERRAIN_FEATURES:
        assert oracles.max_abs_diff(got[name].masked(), want[name]) <= ORACLE_TOL, name


def test_backends_identical():
    if not _jit.HAVE_NUMBA:
        pytest.skip("numba not installed")
    dem = as_grid(oracles.random_surface(11, n=40, nan_cells=4))
    before = _jit.backend()
    try:
        _jit.set_backend("numba")
        a = terrain.derive_all(dem)
        _jit.set_backend("numpy")
        b = terrain.derive_all(dem)
    finally:
        _jit.set_backend(before)
    # atan/atan2 come from different libm builds, so the trig outputs may differ in the last ulp
    for name in ("roughness", "tpi", "tri", "tst", "vrm"):
        assert a[name].equals(b[name]), name
    for name in ("slope", "aspect"):
        assert oracles.max_abs_diff(a[name].masked(), b[name].masked()) <= ORACLE_TOL, name


def test_plane_slope_and_aspect():
    # 1 m up per cellsize eastwards: slope atan(1/30), downslope points west
    g = as_grid(plane(12, 1.0 / 30.0, 0.0))
    s = terrain.slope(g).data
    a = terrain.aspect(g).data
    inner = (slice(1, -1), slice(1, -1))
    np.testing.assert_allclose(s[inner], math.degrees(math.atan(1.0 / 30.0)), rtol=0, atol=1e-12)
    np.testing.assert_allclose(a[inner], 270.0, rtol=0, atol=1e-9)


@pytest.mark.parametrize(
    "east, north, expected",
    [(0.0, 1.0, 180.0), (0.0, -1.0, 0.0), (-1.0, 0.0, 90.0), (1.0, 1.0, 225.0)],
)
def test_plane_aspect_directions(east, north, expected):
    a = terrain.aspect(as_grid(plane(6, east, north)))
    assert a.data[2, 2] == pytest.approx(expected, abs=1e-9)


def test_45_degree_plane():
    s = terrain.slope(as_grid(plane(6, 1.0, 0.0)))
    assert s.data[3, 3] == pytest.approx(45.0, abs=1e-12)


def test_flat_surface():
    g = as_grid(np.full((8, 8), 42.0))
    out = terrain.derive_all(g)
    assert np.all(out["slope"].data == 0.0)
    assert np.all(out["aspect"].data == terrain.FLAT_ASPECT)
    for name in ("roughness", "tpi", "tri", "tst", "vrm"):
        assert np.all(out[name].data == 0.0), name


def test_tpi_sign_on_peak_and_pit():
    z = np.zeros((5, 5))
    z[2, 2] = 8.0
    assert terrain.tpi(as_grid(z)).data[2, 2] == 8.0
    assert terrain.tpi(as_grid(-z)).data[2, 2] == -8.0
    assert terrain.tri(as_grid(z)).data[2, 2] == 8.0
    assert terrain.roughness(as_grid(z)).data[2, 2] == 8.0


def test_tst_single_spike():
    z = np.zeros((9, 9))
    z[4, 4] = 5.0
    # only the spike deviates from its 3x3 median; a radius-1 window sees 1 of 9 cells
    out = terrain.tst(as_grid(z), 1, 1.0).data
    assert out[4, 4] == pytest.approx(1.0 / 9.0)
    assert out[0, 0] == 0.0


def test_nodata_propagates_to_window():
    z = oracles.random_surface(3, n=12)
    z[5, 5] = np.nan
    out = terrain.derive_all(as_grid(z))
    for name in ("slope", "aspect", "roughness", "tpi", "tri"):
        m = out[name].valid_mask()
        assert not m[4:7, 4:7].any(), name
        assert m[0, 0] and m[11, 11], name


def test_window_spec_validation():
    with pytest.raises(DomainError):
        terrain.WindowSpec(0)
    with pytest.raises(DomainError):
        terrain.tpi(as_grid(np.zeros((3, 3))), 0)
    with pytest.raises(DomainError):
        terrain.tst(as_grid(np.zeros((3, 3))), 1, 0.0)
    assert terrain.WindowSpec(2).size == 5


def test_output_keeps_georeference():
    g = Grid(GridHeader(5, 4, 123.0, 456.0, 10.0, -1.0), np.zeros((4, 5)))
    for name, out in terrain.derive_all(g).items():
        assert out.header == g.header, name


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.5, 50.0))
def test_ranges(seed, scale):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(10, 10)) * scale
    out = terrain.derive_all(as_grid(z))
    s = out["slope"].data
    assert np.all((s >= 0) & (s <= 90))
    a = out["aspect"].data
    assert np.all(((a >= 0) & (a < 360)) | (a == terrain.FLAT_ASPECT))
    assert np.all(out["roughness"].data >= 0)
    assert np.all(out["tri"].data >= 0)
    assert np.all(out["tri"].data <= out["roughness"].data + 1e-12)
    for name in ("tst", "vrm"):
        v = out[name].data
        assert np.all((v >= 0) & (v <= 1)), name


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-1e3, 1e3))
def test_shift_invariance(seed, shift):
    z = np.random.default_rng(seed).normal(size=(10, 10)) * 5
    a = terrain.derive_all(as_grid(z))
    b = terrain.derive_all(as_grid(z + shift))
    for name in ("slope", "roughness", "tpi", "tri", "vrm"):
        np.testing.assert_allclose(a[name].data, b[name].data, rtol=0, atol=1e-9, err_msg=name)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_tpi_antisymmetric(seed):
    z = np.random.default_rng(seed).normal(size=(8, 8))
    np.testing.assert_allclose(terrain.tpi(as_grid(-z)).data, -terrain.tpi(as_grid(z)).data, atol=1e-12)
