"""Independent reference implementations used to cross-check the package.

Every function here reaches a result by a deliberately different route than
the library code: explicit loops instead of vectorized filters, a published
alternative ephemeris, exhaustive searches instead of iterative solvers.
"""

from __future__ import annotations

import math

import numpy as np


def eigmin_reference(a, b, c) -> np.ndarray:
    """Minimum eigenvalue of [[a, b], [b, c]] via numpy's symmetric solver."""
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))
    tensors = np.empty(a.shape + (2, 2))
    tensors[..., 0, 0] = a
    tensors[..., 0, 1] = b
    tensors[..., 1, 0] = b
    tensors[..., 1, 1] = c
    return np.linalg.eigvalsh(tensors)[..., 0]


def sobel_reference(values: np.ndarray):
    """Gradients from the 3x3 stencils written out by hand on an edge-padded copy."""
    p = np.pad(np.asarray(values, dtype=np.float64), 1, mode="edge")
    gx = (
        (p[:-2, 2:] + 2.0 * p[1:-1, 2:] + p[2:, 2:])
        - (p[:-2, :-2] + 2.0 * p[1:-1, :-2] + p[2:, :-2])
    ) / 8.0
    gy = (
        (p[2:, :-2] + 2.0 * p[2:, 1:-1] + p[2:, 2:])
        - (p[:-2, :-2] + 2.0 * p[:-2, 1:-1] + p[:-2, 2:])
    ) / 8.0
    return gx, gy


def quality_reference(values: np.ndarray, halfwidth: int, corrupt: np.ndarray | None = None) -> np.ndarray:
    """Per-pixel minimum-eigenvalue quality by explicit window summation."""
    gx, gy = sobel_reference(values)
    height, width = gx.shape
    n = halfwidth
    q = np.zeros((height, width))
    margin = n + 1
    for y in range(margin, height - margin):
        for x in range(margin, width - margin):
            if corrupt is not None and corrupt[max(0, y - n) : y + n + 1, max(0, x - n) : x + n + 1].any():
                continue
            wx = gx[y - n : y + n + 1, x - n : x + n + 1]
            wy = gy[y - n : y + n + 1, x - n : x + n + 1]
            a = float((wx * wx).sum())
            b = float((wx * wy).sum())
            c = float((wy * wy).sum())
            lam = np.linalg.eigvalsh(np.array([[a, b], [b, c]]))[0]
            q[y, x] = max(lam, 0.0)
    return q


def select_reference(quality: np.ndarray, quality_frac: float, nms_size: int, max_features: int):
    """Exhaustive threshold + strict NMS enumeration; returns (x, y, q) tuples."""
    q = np.asarray(quality, dtype=np.float64)
    qmax = q.max(initial=0.0)
    if qmax <= 0.0:
        return []
    threshold = quality_frac * qmax
    half = nms_size // 2
    height, width = q.shape
    kept = []
    for y in range(height):
        for x in range(width):
            value = q[y, x]
            if value < threshold:
                continue
            y0, y1 = max(0, y - half), min(height, y + half + 1)
            x0, x1 = max(0, x - half), min(width, x + half + 1)
            window = q[y0:y1, x0:x1]
            if value < window.max():
                continue
            first = None
            for wy in range(y0, y1):
                for wx in range(x0, x1):
                    if q[wy, wx] == value:
                        first = (wy, wx)
                        break
                if first is not None:
                    break
            if first == (y, x):
                kept.append((-value, y, x))
    kept.sort()
    return [(float(x), float(y), -negq) for negq, y, x in kept[:max_features]]


def bilinear_reference(grid: np.ndarray, x: float, y: float) -> float:
    """Two-pass 1-D linear interpolation: rows first, then the column."""
    grid = np.asarray(grid, dtype=np.float64)
    x0 = min(int(math.floor(x)), grid.shape[1] - 2)
    y0 = min(int(math.floor(y)), grid.shape[0] - 2)
    x0 = max(x0, 0)
    y0 = max(y0, 0)
    fx = x - x0
    row_a = grid[y0, x0] + fx * (grid[y0, x0 + 1] - grid[y0, x0])
    row_b = grid[y0 + 1, x0] + fx * (grid[y0 + 1, x0 + 1] - grid[y0 + 1, x0])
    return float(row_a + (y - y0) * (row_b - row_a))


def ssd_argmin(image_i: np.ndarray, image_j: np.ndarray, cx: int, cy: int, window_half: int = 7, search: int = 7):
    """Exhaustive integer-shift SSD minimizer over [-search, search]^2."""
    best = None
    r = window_half
    w_i = image_i[cy - r : cy + r + 1, cx - r : cx + r + 1]
    for sy in range(-search, search + 1):
        for sx in range(-search, search + 1):
            w_j = image_j[cy + sy - r : cy + sy + r + 1, cx + sx - r : cx + sx + r + 1]
            if w_j.shape != w_i.shape:
                continue
            score = float(((w_i - w_j) ** 2).sum())
            if best is None or score < best[0]:
                best = (score, sx, sy)
    return best[1], best[2]


# Level-1 response of a unit impulse under the separable [1,4,6,4,1]/16 filter
# followed by even-index decimation: the surviving taps are the even offsets
# [1, 6, 1]/16 on each axis, whose outer product is this block over 256.
BINOMIAL_IMPULSE_BLOCK = np.array(
    [
        [1.0, 6.0, 1.0],
        [6.0, 36.0, 6.0],
        [1.0, 6.0, 1.0],
    ]
) / 256.0


def psa_zenith(lat: float, lon: float, when) -> float:
    """Solar zenith angle in degrees via the PSA ephemeris (Blanco-Muriel 2001).

    Independent route: ecliptic longitude to right ascension and declination,
    then the hour angle from Greenwich mean sidereal time.
    """
    hour = when.hour + when.minute / 60.0 + when.second / 3600.0
    jd = (
        367 * when.year
        - (7 * (when.year + (when.month + 9) // 12)) // 4
        + (275 * when.month) // 9
        + when.day
        + 1721013.5
        + hour / 24.0
    )
    elapsed = jd - 2451545.0
    omega = 2.1429 - 0.0010394594 * elapsed
    mean_long = 4.8950630 + 0.017202791698 * elapsed
    mean_anom = 6.2400600 + 0.0172019699 * elapsed
    ecl_long = (
        mean_long
        + 0.03341607 * math.sin(mean_anom)
        + 0.00034894 * math.sin(2.0 * mean_anom)
        - 0.0001134
        - 0.0000203 * math.sin(omega)
    )
    obliquity = 0.4090928 - 6.2140e-9 * elapsed + 0.0000396 * math.cos(omega)
    sin_el = math.sin(ecl_long)
    ra = math.atan2(math.cos(obliquity) * sin_el, math.cos(ecl_long)) % (2.0 * math.pi)
    decl = math.asin(math.sin(obliquity) * sin_el)
    gmst = 6.6974243242 + 0.0657098283 * elapsed + hour
    lmst = math.radians(gmst * 15.0 + lon)
    hour_angle = lmst - ra
    lat_r = math.radians(lat)
    cos_zen = math.cos(lat_r) * math.cos(hour_angle) * math.cos(decl) + math.sin(decl) * math.sin(lat_r)
    zenith = math.acos(max(-1.0, min(1.0, cos_zen)))
    # Mean-distance parallax correction, as published.
    zenith += (6371.01 / 149597890.0) * math.sin(zenith)
    return math.degrees(zenith)


def haversine_reference_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance with one degree of arc equal to 111.32 km."""
    radius_km = 111.32 * 180.0 / math.pi
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    h = math.sin(dp / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2.0) ** 2
    return 2.0 * radius_km * math.asin(math.sqrt(h))
