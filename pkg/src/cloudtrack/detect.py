"""Corner-style feature detection for track seeding.

Quality is the minimum eigenvalue of the 2x2 gradient structure tensor summed
over a square neighborhood; candidates above a fraction of the frame maximum
survive strict non-maximum suppression and are returned best-first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

# 3x3 derivative stencils, normalized so a unit-slope ramp yields gradient 1.
SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 8.0
SOBEL_Y = SOBEL_X.T


class DetectError(Exception):
    """Detection preconditions violated."""


@dataclass(frozen=True)
class DetectorParams:
    """Knobs for quality scoring and selection.

    ``tensor_halfwidth`` n gives a (2n+1)^2 summation window, ``nms_size`` the
    side of the suppression window, ``quality_frac`` the threshold as a
    fraction of the frame's maximum quality.
    """

    tensor_halfwidth: int = 3
    nms_size: int = 3
    quality_frac: float = 0.2
    max_features: int = 50

    def __post_init__(self) -> None:
        if self.tensor_halfwidth < 1:
            raise ValueError("tensor_halfwidth must be >= 1")
        if self.nms_size < 1 or self.nms_size % 2 == 0:
            raise ValueError("nms_size must be odd and >= 1")
        if not 0.0 < self.quality_frac <= 1.0:
            raise ValueError("quality_frac must be in (0, 1]")
        if self.max_features < 1:
            raise ValueError("max_features must be >= 1")


@dataclass(frozen=True)
class FeaturePoint:
    """A selected feature: pixel position (x right, y down) and its quality."""

    x: float
    y: float
    quality: float


def image_gradients(values: np.ndarray):
    """Per-pixel (gx, gy) via the 3x3 stencils with replicated edges.

    The stencils factor into a difference [-1, 0, 1] and a smoothing
    [1, 2, 1]/8 pass; applying them separably keeps constant regions at
    exactly zero gradient.
    """
    grid = np.asarray(values, dtype=np.float64)
    if grid.ndim != 2 or min(grid.shape) < 3:
        raise DetectError(f"gradients need at least a 3x3 grid, got {grid.shape}")
    diff = np.array([-1.0, 0.0, 1.0])
    smooth = np.array([1.0, 2.0, 1.0]) / 8.0
    gx = ndimage.correlate1d(grid, diff, axis=1, mode="nearest")
    gx = ndimage.correlate1d(gx, smooth, axis=0, mode="nearest")
    gy = ndimage.correlate1d(grid, diff, axis=0, mode="nearest")
    gy = ndimage.correlate1d(gy, smooth, axis=1, mode="nearest")
    return gx, gy


def min_eigenvalue(a, b, c):
    """Smaller eigenvalue of the symmetric tensor [[a, b], [b, c]], closed form."""
    a = np.asarray(a, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return 0.5 * (a + c - np.sqrt((a - c) ** 2 + 4.0 * b * b))


def quality_map(values: np.ndarray, params: DetectorParams, corrupt: np.ndarray | None = None) -> np.ndarray:
    """Minimum-eigenvalue quality for every pixel.

    The tensor sums gradient products over the (2n+1)^2 neighborhood.  Pixels
    whose neighborhood touches a corrupt pixel score 0, as does the n+1 border
    margin where the stencil support leaves the grid.
    """
    n = params.tensor_halfwidth
    grid = np.asarray(values, dtype=np.float64)
    if min(grid.shape) < 2 * n + 3:
        raise DetectError(f"grid {grid.shape} too small for tensor halfwidth {n}")
    gx, gy = image_gradients(grid)
    win = 2 * n + 1
    area = float(win * win)
    # uniform_filter returns the window mean; rescale to the window sum.
    sum_xx = ndimage.uniform_filter(gx * gx, size=win, mode="constant") * area
    sum_xy = ndimage.uniform_filter(gx * gy, size=win, mode="constant") * area
    sum_yy = ndimage.uniform_filter(gy * gy, size=win, mode="constant") * area
    q = min_eigenvalue(sum_xx, sum_xy, sum_yy)
    np.maximum(q, 0.0, out=q)  # clamp closed-form rounding noise at lambda ~ 0
    margin = n + 1
    q[:margin, :] = 0.0
    q[-margin:, :] = 0.0
    q[:, :margin] = 0.0
    q[:, -margin:] = 0.0
    if corrupt is not None and corrupt.any():
        tainted = ndimage.maximum_filter(corrupt.astype(np.uint8), size=win, mode="constant")
        q[tainted.astype(bool)] = 0.0
    return q


def select_features(quality: np.ndarray, params: DetectorParams) -> list[FeaturePoint]:
    """Threshold + strict non-max suppression, best-first, capped.

    A pixel survives suppression only if every other pixel in its nms window
    has lower quality, or equal quality at a later row-major position.  The
    survivors are ordered by descending quality (ties row-major) and truncated
    to ``max_features``.  An all-zero map yields no features.
    """
    q = np.asarray(quality, dtype=np.float64)
    qmax = float(q.max(initial=0.0))
    if qmax <= 0.0:
        return []
    threshold = params.quality_frac * qmax
    half = params.nms_size // 2
    height, width = q.shape
    window_max = ndimage.maximum_filter(q, size=params.nms_size, mode="constant")
    candidates = np.argwhere((q >= threshold) & (q == window_max))
    kept = []
    for y, x in candidates:
        value = q[y, x]
        y0, y1 = max(0, y - half), min(height, y + half + 1)
        x0, x1 = max(0, x - half), min(width, x + half + 1)
        ties = np.argwhere(q[y0:y1, x0:x1] == value)
        ty, tx = ties[0]  # argwhere scans row-major, so [0] is the earliest tie
        if (y0 + ty, x0 + tx) == (y, x):
            kept.append((float(-value), int(y), int(x)))
    kept.sort()
    return [FeaturePoint(x=float(x), y=float(y), quality=-negq) for negq, y, x in kept[: params.max_features]]


def detect_features(values: np.ndarray, params: DetectorParams, corrupt: np.ndarray | None = None) -> list[FeaturePoint]:
    """Quality map plus selection in one call."""
    return select_features(quality_map(values, params, corrupt), params)
