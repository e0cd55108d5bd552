"""Sparse window-matching optical flow with coarse-to-fine refinement.

A feature's displacement between two frames minimizes the sum of squared
differences over a fixed window.  Each pyramid level runs an iterative
least-squares refinement driven by the first frame's gradients; the solved
displacement doubles on descent to the next finer level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .detect import min_eigenvalue

# 5-tap low-pass applied separably before each 2x decimation.  Its response
# vanishes at the half-sample frequency, which is what keeps the decimated
# grid's mean faithful to the source.
BINOMIAL_5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

LOST_OUT_OF_BOUNDS = "out_of_bounds"
LOST_SINGULAR = "singular"
LOST_DIVERGED = "diverged"

_BOUNDARY_MODES = {"reflect": "reflect", "replicate": "nearest", "wrap": "wrap"}


class FlowError(Exception):
    """Flow preconditions violated."""


class OutOfBoundsError(FlowError):
    """A sample position falls outside the grid."""


@dataclass(frozen=True)
class FlowParams:
    """Matching-window half extents, pyramid depth, and stop rules.

    ``epsilon_stop`` bounds the per-iteration update norm; iteration also
    stops after ``max_iterations``.  ``min_gradient_eig`` guards the normal
    equations; when None it defaults to 1e-3 per window pixel, stated for
    intensities scaled to [0, 1].
    """

    window_halfwidth_x: int = 7
    window_halfwidth_y: int = 7
    pyramid_levels: int = 3
    max_iterations: int = 10
    epsilon_stop: float = 0.03
    min_gradient_eig: float | None = None

    def __post_init__(self) -> None:
        if self.window_halfwidth_x < 1 or self.window_halfwidth_y < 1:
            raise ValueError("window half extents must be >= 1")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.epsilon_stop <= 0.0:
            raise ValueError("epsilon_stop must be positive")

    @property
    def resolved_min_eig(self) -> float:
        if self.min_gradient_eig is not None:
            return self.min_gradient_eig
        area = (2 * self.window_halfwidth_x + 1) * (2 * self.window_halfwidth_y + 1)
        return 1e-3 * area

    @property
    def divergence_limit(self) -> float:
        # Displacements beyond 4 window diagonals are treated as runaways.
        return 4.0 * math.hypot(2 * self.window_halfwidth_x + 1, 2 * self.window_halfwidth_y + 1)


@dataclass
class ImagePyramid:
    """Coarse-to-fine image stack; ``levels[0]`` is the full-resolution grid."""

    levels: list

    def __len__(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class FlowVector:
    """Solved displacement in full-resolution pixels plus solver diagnostics."""

    dx: float
    dy: float
    residual: float
    iterations: int


@dataclass(frozen=True)
class TrackOutcome:
    """Result of tracking one feature: a flow vector or a loss reason."""

    ok: bool
    flow: FlowVector | None = None
    reason: str | None = None


def sample_bilinear(grid: np.ndarray, x, y):
    """Bilinear interpolation of ``grid`` at (x, y); x indexes columns.

    Positions must satisfy 0 <= x <= width-1 and 0 <= y <= height-1, else
    :class:`OutOfBoundsError`.  Accepts scalars or arrays.
    """
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2 or min(g.shape) < 2:
        raise FlowError(f"bilinear sampling needs a 2-D grid of at least 2x2, got {g.shape}")
    height, width = g.shape
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if (xa < 0).any() or (xa > width - 1).any() or (ya < 0).any() or (ya > height - 1).any():
        raise OutOfBoundsError("sample position outside grid")
    x0 = np.minimum(np.floor(xa), width - 2).astype(np.intp)
    y0 = np.minimum(np.floor(ya), height - 2).astype(np.intp)
    fx = xa - x0
    fy = ya - y0
    top = (1.0 - fx) * g[y0, x0] + fx * g[y0, x0 + 1]
    bottom = (1.0 - fx) * g[y0 + 1, x0] + fx * g[y0 + 1, x0 + 1]
    out = (1.0 - fy) * top + fy * bottom
    return out if out.ndim else float(out)


def build_pyramid(values: np.ndarray, levels: int, boundary: str = "reflect") -> ImagePyramid:
    """Low-pass and 2x-decimate ``levels - 1`` times.

    Decimation keeps even-indexed rows/columns, so level L has ceil(n / 2^L)
    samples per axis.  ``boundary`` picks the filter's edge extension:
    "reflect" (symmetric), "replicate", or "wrap" (periodic).
    """
    if levels < 1:
        raise FlowError("pyramid needs at least one level")
    try:
        mode = _BOUNDARY_MODES[boundary]
    except KeyError:
        raise FlowError(f"unknown boundary rule {boundary!r}") from None
    grid = np.asarray(values, dtype=np.float64)
    if grid.ndim != 2:
        raise FlowError("pyramid input must be 2-D")
    stack = [grid]
    for _ in range(levels - 1):
        smoothed = ndimage.correlate1d(grid, BINOMIAL_5, axis=0, mode=mode)
        smoothed = ndimage.correlate1d(smoothed, BINOMIAL_5, axis=1, mode=mode)
        grid = smoothed[::2, ::2]
        if min(grid.shape) < 3:
            raise FlowError(f"frame too small for {levels} pyramid levels")
        stack.append(grid)
    return ImagePyramid(levels=stack)


def _window_in_bounds(grid, cx, cy, hw_x, hw_y, halo=0.0):
    height, width = grid.shape
    return (
        cx - hw_x - halo >= 0.0
        and cy - hw_y - halo >= 0.0
        and cx + hw_x + halo <= width - 1
        and cy + hw_y + halo <= height - 1
    )


def lk_refine(image_i: np.ndarray, image_j: np.ndarray, center, guess, params: FlowParams) -> TrackOutcome:
    """Single-level iterative refinement of a displacement guess.

    Solves the 2x2 normal equations built from the first image's window
    gradients, updating the displacement until the step norm drops below
    ``epsilon_stop`` or iterations run out.  A step that raises the residual
    is halved up to four times; when no damped step improves, the solver has
    reached a minimum of the sampled cost and stops where it is.  The accepted
    residual therefore never increases.  Displacements running beyond four
    window diagonals are lost as diverged.
    """
    hw_x, hw_y = params.window_halfwidth_x, params.window_halfwidth_y
    cx, cy = float(center[0]), float(center[1])
    # the gradient stencil needs one extra pixel around the window in image_i
    if not _window_in_bounds(image_i, cx, cy, hw_x, hw_y, halo=1.0):
        return TrackOutcome(ok=False, reason=LOST_OUT_OF_BOUNDS)
    xs = cx + np.arange(-hw_x, hw_x + 1, dtype=np.float64)
    ys = cy + np.arange(-hw_y, hw_y + 1, dtype=np.float64)
    win_x, win_y = np.meshgrid(xs, ys)
    window_i = sample_bilinear(image_i, win_x, win_y)
    grad_x = 0.5 * (sample_bilinear(image_i, win_x + 1.0, win_y) - sample_bilinear(image_i, win_x - 1.0, win_y))
    grad_y = 0.5 * (sample_bilinear(image_i, win_x, win_y + 1.0) - sample_bilinear(image_i, win_x, win_y - 1.0))
    g_xx = float(np.sum(grad_x * grad_x))
    g_xy = float(np.sum(grad_x * grad_y))
    g_yy = float(np.sum(grad_y * grad_y))
    if min_eigenvalue(g_xx, g_xy, g_yy) < params.resolved_min_eig:
        return TrackOutcome(ok=False, reason=LOST_SINGULAR)
    det = g_xx * g_yy - g_xy * g_xy

    def shifted_window(d):
        if not _window_in_bounds(image_j, cx + d[0], cy + d[1], hw_x, hw_y):
            return None
        return sample_bilinear(image_j, win_x + d[0], win_y + d[1])

    d = np.array([float(guess[0]), float(guess[1])])
    window_j = shifted_window(d)
    if window_j is None:
        return TrackOutcome(ok=False, reason=LOST_OUT_OF_BOUNDS)
    residual = float(np.sum((window_i - window_j) ** 2))
    iterations = 0
    for _ in range(params.max_iterations):
        diff = window_i - window_j
        b_x = float(np.sum(grad_x * diff))
        b_y = float(np.sum(grad_y * diff))
        delta = np.array([(g_yy * b_x - g_xy * b_y) / det, (g_xx * b_y - g_xy * b_x) / det])
        iterations += 1
        converged = math.hypot(delta[0], delta[1]) < params.epsilon_stop
        step = delta
        accepted = False
        for _ in range(5):  # the proposed step, then up to four halvings
            candidate = d + step
            if math.hypot(candidate[0], candidate[1]) > params.divergence_limit:
                return TrackOutcome(ok=False, reason=LOST_DIVERGED)
            window_c = shifted_window(candidate)
            if window_c is None:
                return TrackOutcome(ok=False, reason=LOST_OUT_OF_BOUNDS)
            candidate_residual = float(np.sum((window_i - window_c) ** 2))
            if candidate_residual <= residual:
                accepted = True
                break
            step = step / 2.0
        if not accepted:
            # No damped step lowers the sampled cost: the current d is a
            # minimum at this level's sampling, so stop here.
            break
        d = candidate
        residual = candidate_residual
        window_j = window_c
        if converged:
            break
    return TrackOutcome(
        ok=True,
        flow=FlowVector(dx=float(d[0]), dy=float(d[1]), residual=residual, iterations=iterations),
    )


def track_feature(pyramid_i: ImagePyramid, pyramid_j: ImagePyramid, point, params: FlowParams) -> TrackOutcome:
    """Coarse-to-fine tracking of one full-resolution point.

    The displacement solved at each level seeds the next finer level doubled.
    Both pyramids must carry at least ``pyramid_levels`` levels of matching
    shapes.
    """
    depth = params.pyramid_levels
    if len(pyramid_i) < depth or len(pyramid_j) < depth:
        raise FlowError(f"pyramids too shallow for {depth} levels")
    for level in range(depth):
        if pyramid_i.levels[level].shape != pyramid_j.levels[level].shape:
            raise FlowError("pyramid level shapes differ between frames")
    px, py = float(point[0]), float(point[1])
    d = np.zeros(2)
    last = None
    for level in range(depth - 1, -1, -1):
        scale = float(2**level)
        outcome = lk_refine(
            pyramid_i.levels[level],
            pyramid_j.levels[level],
            (px / scale, py / scale),
            d,
            params,
        )
        if not outcome.ok:
            return outcome
        last = outcome.flow
        d = np.array([last.dx, last.dy])
        if level > 0:
            d *= 2.0
    return TrackOutcome(
        ok=True,
        flow=FlowVector(dx=float(d[0]), dy=float(d[1]), residual=last.residual, iterations=last.iterations),
    )
