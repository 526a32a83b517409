"""Moving-window kernels on float arrays with NaN marking invalid cells.

Every kernel exists as a numba loop (``*_nb``) and a vectorised numpy
equivalent (``*_np``). Both clamp indices at the border and propagate NaN
from any window cell. Summation order inside a window is row-major in both
paths so the two agree to the last bit for sums.
"""
import math

import numpy as np

from ._jit import njit


# ---------------------------------------------------------------- numba ----


@njit
def _clamp(i, n):
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


@njit
def horn_nb(z, cellsize):
    nr, nc = z.shape
    dzdx = np.empty((nr, nc))
    dzdy = np.empty((nr, nc))
    for r in range(nr):
        rn = _clamp(r - 1, nr)
        rs = _clamp(r + 1, nr)
        for c in range(nc):
            cw = _clamp(c - 1, nc)
            ce = _clamp(c + 1, nc)
            a = z[rn, cw]
            b = z[rn, c]
            cc = z[rn, ce]
            d = z[r, cw]
            f = z[r, ce]
            g = z[rs, cw]
            h = z[rs, c]
            i = z[rs, ce]
            e = z[r, c]
            gx = ((cc + 2.0 * f + i) - (a + 2.0 * d + g)) / (8.0 * cellsize)
            gy = ((a + 2.0 * b + cc) - (g + 2.0 * h + i)) / (8.0 * cellsize)
            if math.isnan(e):
                gx = np.nan
                gy = np.nan
            dzdx[r, c] = gx
            dzdy[r, c] = gy
    return dzdx, dzdy


@njit
def slope_aspect_nb(dzdx, dzdy):
    nr, nc = dzdx.shape
    slope = np.empty((nr, nc))
    aspect = np.empty((nr, nc))
    for r in range(nr):
        for c in range(nc):
            gx = dzdx[r, c]
            gy = dzdy[r, c]
            if math.isnan(gx) or math.isnan(gy):
                slope[r, c] = np.nan
                aspect[r, c] = np.nan
                continue
            slope[r, c] = math.degrees(math.atan(math.sqrt(gx * gx + gy * gy)))
            if gx == 0.0 and gy == 0.0:
                aspect[r, c] = -1.0
            else:
                a = math.degrees(math.atan2(-gx, -gy))
                if a < 0.0:
                    a += 360.0
                if a >= 360.0:
                    a = 0.0
                aspect[r, c] = a
    return slope, aspect


@njit
def roughness_nb(z):
    nr, nc = z.shape
    out = np.empty((nr, nc))
    for r in range(nr):
        for c in range(nc):
            lo = np.inf
            hi = -np.inf
            bad = False
            for dr in range(-1, 2):
                rr = _clamp(r + dr, nr)
                for dc in range(-1, 2):
                    v = z[rr, _clamp(c + dc, nc)]
                    if math.isnan(v):
                        bad = True
                    else:
                        if v < lo:
                            lo = v
                        if v > hi:
                            hi = v
            out[r, c] = np.nan if bad else hi - lo
    return out


@njit
def tpi_nb(z, radius):
    nr, nc = z.shape
    out = np.empty((nr, nc))
    n_other = (2 * radius + 1) * (2 * radius + 1) - 1
    for r in range(nr):
        for c in range(nc):
            s = 0.0
            for dr in range(-radius, radius + 1):
                rr = _clamp(r + dr, nr)
                for dc in range(-radius, radius + 1):
                    if dr == 0 and dc == 0:
                        continue
                    s += z[rr, _clamp(c + dc, nc)]
            out[r, c] = z[r, c] - s / n_other
    return out


@njit
def tri_nb(z):
    nr, nc = z.shape
    out = np.empty((nr, nc))
    for r in range(nr):
        for c in range(nc):
            e = z[r, c]
            s = 0.0
            for dr in range(-1, 2):
                rr = _clamp(r + dr, nr)
                for dc in range(-1, 2):
                    if dr == 0 and dc == 0:
                        continue
                    s += abs(e - z[rr, _clamp(c + dc, nc)])
            out[r, c] = s / 8.0
    return out


@njit
def median3_nb(z):
    nr, nc = z.shape
    out = np.empty((nr, nc))
    buf = np.empty(9)
    for r in range(nr):
        for c in range(nc):
            k = 0
            bad = False
            for dr in range(-1, 2):
                rr = _clamp(r + dr, nr)
                for dc in range(-1, 2):
                    v = z[rr, _clamp(c + dc, nc)]
                    if math.isnan(v):
                        bad = True
                    buf[k] = v
                    k += 1
            if bad:
                out[r, c] = np.nan
                continue
            for i in range(1, 9):
                v = buf[i]
                j = i - 1
                while j >= 0 and buf[j] > v:
                    buf[j + 1] = buf[j]
                    j -= 1
                buf[j + 1] = v
            out[r, c] = buf[4]
    return out


@njit
def window_mean_nb(field, radius):
    """Mean over the clamped (2r+1)^2 window; NaN if any cell is NaN.

    Separable row-then-column sums. Used on 0/1 flag fields, where every
    partial sum is an exact integer, so the result does not depend on the
    summation order.
    """
    nr, nc = field.shape
    rows = np.empty((nr, nc))
    for r in range(nr):
        for c in range(nc):
            s = 0.0
            for dc in range(-radius, radius + 1):
                s += field[r, _clamp(c + dc, nc)]
            rows[r, c] = s
    out = np.empty((nr, nc))
    n = (2 * radius + 1) * (2 * radius + 1)
    for r in range(nr):
        for c in range(nc):
            s = 0.0
            for dr in range(-radius, radius + 1):
                s += rows[_clamp(r + dr, nr), c]
            out[r, c] = s / n
    return out


@njit
def vrm_nb(slope_deg, aspect_deg, radius):
    nr, nc = slope_deg.shape
    nx = np.empty((nr, nc))
    ny = np.empty((nr, nc))
    nz = np.empty((nr, nc))
    for r in range(nr):
        for c in range(nc):
            s = math.radians(slope_deg[r, c])
            a = math.radians(aspect_deg[r, c])
            nx[r, c] = math.sin(s) * math.sin(a)
            ny[r, c] = math.sin(s) * math.cos(a)
            nz[r, c] = math.cos(s)
    out = np.empty((nr, nc))
    n = (2 * radius + 1) * (2 * radius + 1)
    for r in range(nr):
        for c in range(nc):
            sx = 0.0
            sy = 0.0
            sz = 0.0
            for dr in range(-radius, radius + 1):
                rr = _clamp(r + dr, nr)
                for dc in range(-radius, radius + 1):
                    cc = _clamp(c + dc, nc)
                    sx += nx[rr, cc]
                    sy += ny[rr, cc]
                    sz += nz[rr, cc]
            v = 1.0 - math.sqrt(sx * sx + sy * sy + sz * sz) / n
            if v < 0.0:
                v = 0.0
            out[r, c] = v
    return out


# ---------------------------------------------------------------- numpy ----


def _shifts(z, radius):
    """Yield (dr, dc, shifted view) over the clamped window in row-major order."""
    p = np.pad(z, radius, mode="edge")
    nr, nc = z.shape
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            yield dr, dc, p[radius + dr : radius + dr + nr, radius + dc : radius + dc + nc]


def horn_np(z, cellsize):
    p = np.pad(z, 1, mode="edge")
    a, b, c = p[:-2, :-2], p[:-2, 1:-1], p[:-2, 2:]
    d, f = p[1:-1, :-2], p[1:-1, 2:]
    g, h, i = p[2:, :-2], p[2:, 1:-1], p[2:, 2:]
    dzdx = ((c + 2.0 * f + i) - (a + 2.0 * d + g)) / (8.0 * cellsize)
    dzdy = ((a + 2.0 * b + c) - (g + 2.0 * h + i)) / (8.0 * cellsize)
    bad = np.isnan(z)
    dzdx[bad] = np.nan
    dzdy[bad] = np.nan
    return dzdx, dzdy


def slope_aspect_np(dzdx, dzdy):
    with np.errstate(invalid="ignore"):
        slope = np.degrees(np.arctan(np.sqrt(dzdx * dzdx + dzdy * dzdy)))
        aspect = np.degrees(np.arctan2(-dzdx, -dzdy))
    aspect = np.where(aspect < 0.0, aspect + 360.0, aspect)
    aspect = np.where(aspect >= 360.0, 0.0, aspect)
    aspect = np.where((dzdx == 0.0) & (dzdy == 0.0), -1.0, aspect)
    aspect[np.isnan(slope)] = np.nan
    return slope, aspect


def roughness_np(z):
    stack = np.stack([v for _, _, v in _shifts(z, 1)])
    return stack.max(axis=0) - stack.min(axis=0)


def tpi_np(z, radius):
    s = np.zeros_like(z)
    for dr, dc, v in _shifts(z, radius):
        if dr == 0 and dc == 0:
            continue
        s = s + v
    return z - s / ((2 * radius + 1) ** 2 - 1)


def tri_np(z):
    s = np.zeros_like(z)
    for dr, dc, v in _shifts(z, 1):
        if dr == 0 and dc == 0:
            continue
        s = s + np.abs(z - v)
    return s / 8.0


def median3_np(z):
    return np.median(np.stack([v for _, _, v in _shifts(z, 1)]), axis=0)


def window_mean_np(field, radius):
    s = np.zeros_like(field)
    for _, _, v in _shifts(field, radius):
        s = s + v
    return s / ((2 * radius + 1) ** 2)


def vrm_np(slope_deg, aspect_deg, radius):
    s = np.radians(slope_deg)
    a = np.radians(aspect_deg)
    nx = np.sin(s) * np.sin(a)
    ny = np.sin(s) * np.cos(a)
    nz = np.cos(s)
    sx = np.zeros_like(nx)
    sy = np.zeros_like(nx)
    sz = np.zeros_like(nx)
    for (_, _, vx), (_, _, vy), (_, _, vz) in zip(_shifts(nx, radius), _shifts(ny, radius), _shifts(nz, radius)):
        sx = sx + vx
        sy = sy + vy
        sz = sz + vz
    n = (2 * radius + 1) ** 2
    out = 1.0 - np.sqrt(sx * sx + sy * sy + sz * sz) / n
    return np.where(out < 0.0, 0.0, out)
