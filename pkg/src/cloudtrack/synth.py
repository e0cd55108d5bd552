"""Synthetic raster sequences with analytic ground truth.

A seeded periodic noise texture is warped each frame by a closed-form flow
(uniform translation, solid-body rotation, or lateral shear), so frame k is
always resampled once from the seed texture rather than through a chain of
warps.  An optional bright ridge with a Gaussian cross-section rides the same
flow, fading on a configurable schedule; optional brightness ramps and
corrupt-pixel injections exercise the tracker's gating paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np
from scipy import ndimage

from .raster import Frame, GeoTransform, format_rfc3339, parse_rfc3339, save_frame

MAX_LEVEL = 65535.0


class SynthError(Exception):
    """Scene specification invalid."""


@dataclass(frozen=True)
class UniformFlow:
    """Every point moves (u, v) pixels per frame."""

    u: float
    v: float

    def forward(self, x, y, k: float):
        return np.asarray(x) + k * self.u, np.asarray(y) + k * self.v

    def inverse(self, x, y, k: float):
        return np.asarray(x) - k * self.u, np.asarray(y) - k * self.v


@dataclass(frozen=True)
class RotationFlow:
    """Solid-body rotation about a pixel center, ``omega`` radians per frame.

    Positive omega turns x toward y (clockwise on screen, where y points
    down).
    """

    center_x: float
    center_y: float
    omega: float

    def _rotate(self, x, y, angle: float):
        dx = np.asarray(x, dtype=np.float64) - self.center_x
        dy = np.asarray(y, dtype=np.float64) - self.center_y
        cos_a, sin_a = math.cos(angle), math.sin(angle)
        return (
            self.center_x + cos_a * dx - sin_a * dy,
            self.center_y + sin_a * dx + cos_a * dy,
        )

    def forward(self, x, y, k: float):
        return self._rotate(x, y, k * self.omega)

    def inverse(self, x, y, k: float):
        return self._rotate(x, y, -k * self.omega)


@dataclass(frozen=True)
class ShearFlow:
    """Translation whose x-rate varies linearly with the source row."""

    u0: float
    v0: float
    du_dy: float
    ref_y: float

    def forward(self, x, y, k: float):
        ya = np.asarray(y, dtype=np.float64)
        return np.asarray(x) + k * (self.u0 + self.du_dy * (ya - self.ref_y)), ya + k * self.v0

    def inverse(self, x, y, k: float):
        y_src = np.asarray(y, dtype=np.float64) - k * self.v0
        return np.asarray(x) - k * (self.u0 + self.du_dy * (y_src - self.ref_y)), y_src


@dataclass(frozen=True)
class TextureSpec:
    """Seeded periodic multi-octave noise.

    ``correlation_px`` is the smoothing scale of the base octave; each further
    octave halves the scale and scales the amplitude by ``octave_decay``
    (values above 1 emphasize fine detail over the base scale).  ``contrast``
    is the final standard deviation in [0, 1] intensity units.
    """

    seed: int = 0
    correlation_px: float = 5.0
    octaves: int = 3
    contrast: float = 0.12
    octave_decay: float = 0.5

    def __post_init__(self) -> None:
        if self.correlation_px <= 0 or self.octaves < 1 or not 0 < self.contrast < 0.5:
            raise SynthError("bad texture spec")
        if self.octave_decay <= 0:
            raise SynthError("bad texture spec")


@dataclass(frozen=True)
class RidgeSpec:
    """A bright line segment with a Gaussian cross-section, advected by the flow.

    ``amplitude`` is in [0, 1] intensity units on top of the 0.5 background
    mean; ``width_px`` is the cross-section sigma.  From ``fade_start`` the
    ridge dims linearly to zero over ``fade_frames`` frames (None never
    fades).
    """

    x0: float
    y0: float
    x1: float
    y1: float
    width_px: float = 3.0
    amplitude: float = 0.3
    fade_start: int | None = None
    fade_frames: int = 6

    def visibility(self, k: int) -> float:
        if self.fade_start is None or k < self.fade_start:
            return 1.0
        if self.fade_frames <= 0:
            return 0.0
        return max(0.0, 1.0 - (k - self.fade_start + 1) / self.fade_frames)

    def midpoint(self):
        return 0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)


@dataclass(frozen=True)
class TransitionSpec:
    """Brightness ramp around the 0.5 mean: contrast factor 1 -> 1 - depth.

    ``depth`` of 2 therefore inverts the scene by the end of the ramp.  The
    post-ramp factor persists for the rest of the sequence.
    """

    start_frame: int
    frames: int
    depth: float

    def factor(self, k: int) -> float:
        if k < self.start_frame:
            return 1.0
        if k >= self.start_frame + self.frames:
            return 1.0 - self.depth
        return 1.0 - self.depth * (k - self.start_frame + 1) / self.frames


@dataclass(frozen=True)
class CorruptionSpec:
    """Flag ``fraction`` of one frame's pixels (a row-major leading block)."""

    frame: int
    fraction: float


@dataclass
class SceneSpec:
    width: int
    height: int
    n_frames: int
    start_time: datetime
    geo: GeoTransform
    flow: object
    texture: TextureSpec = field(default_factory=TextureSpec)
    cadence_s: float = 300.0
    ridge: RidgeSpec | None = None
    transition: TransitionSpec | None = None
    corruption: tuple = ()

    def __post_init__(self) -> None:
        if self.width < 8 or self.height < 8 or self.n_frames < 1:
            raise SynthError("scene must be at least 8x8 pixels and one frame")
        if self.cadence_s <= 0:
            raise SynthError("cadence must be positive")
        if self.corruption is None:
            self.corruption = ()
        elif isinstance(self.corruption, CorruptionSpec):
            self.corruption = (self.corruption,)
        else:
            self.corruption = tuple(self.corruption)

    def timestamp(self, k: int) -> datetime:
        return self.start_time + timedelta(seconds=k * self.cadence_s)


@dataclass
class GeneratedScene:
    manifest_path: object
    truth_path: object
    frame_paths: list


def make_texture(spec: TextureSpec, width: int, height: int) -> np.ndarray:
    """Zero-mean periodic noise field with standard deviation ``contrast``."""
    rng = np.random.default_rng(spec.seed)
    total = np.zeros((height, width))
    for octave in range(spec.octaves):
        white = rng.standard_normal((height, width))
        sigma = spec.correlation_px / (2.0**octave)
        layer = ndimage.gaussian_filter(white, sigma=sigma, mode="wrap")
        std = layer.std()
        if std > 0:
            total += (spec.octave_decay**octave) * layer / std
    total -= total.mean()
    std = total.std()
    if std > 0:
        total *= spec.contrast / std
    return total


def _sample_wrapped(grid: np.ndarray, x, y) -> np.ndarray:
    # Bilinear sampling on the texture torus; any real coordinate is valid.
    height, width = grid.shape
    xa = np.mod(np.asarray(x, dtype=np.float64), width)
    ya = np.mod(np.asarray(y, dtype=np.float64), height)
    x0 = np.floor(xa).astype(np.intp) % width
    y0 = np.floor(ya).astype(np.intp) % height
    x1 = (x0 + 1) % width
    y1 = (y0 + 1) % height
    fx = xa - np.floor(xa)
    fy = ya - np.floor(ya)
    top = (1.0 - fx) * grid[y0, x0] + fx * grid[y0, x1]
    bottom = (1.0 - fx) * grid[y1, x0] + fx * grid[y1, x1]
    return (1.0 - fy) * top + fy * bottom


def _segment_distance(px, py, ax, ay, bx, by):
    abx, aby = bx - ax, by - ay
    ab2 = abx * abx + aby * aby
    if ab2 == 0.0:
        return np.hypot(px - ax, py - ay)
    t = np.clip(((px - ax) * abx + (py - ay) * aby) / ab2, 0.0, 1.0)
    return np.hypot(px - (ax + t * abx), py - (ay + t * aby))


def render_frame(spec: SceneSpec, texture: np.ndarray, k: int) -> np.ndarray:
    """Frame k in [0, 1] intensity units, before quantization."""
    grid_x, grid_y = np.meshgrid(
        np.arange(spec.width, dtype=np.float64), np.arange(spec.height, dtype=np.float64)
    )
    src_x, src_y = spec.flow.inverse(grid_x, grid_y, float(k))
    signal = _sample_wrapped(texture, src_x, src_y)
    if spec.ridge is not None:
        vis = spec.ridge.visibility(k)
        if vis > 0.0:
            ax, ay = spec.flow.forward(spec.ridge.x0, spec.ridge.y0, float(k))
            bx, by = spec.flow.forward(spec.ridge.x1, spec.ridge.y1, float(k))
            dist = _segment_distance(grid_x, grid_y, float(ax), float(ay), float(bx), float(by))
            signal = signal + vis * spec.ridge.amplitude * np.exp(-(dist**2) / (2.0 * spec.ridge.width_px**2))
    factor = spec.transition.factor(k) if spec.transition is not None else 1.0
    return np.clip(0.5 + factor * signal, 0.0, 1.0)


def corruption_mask(spec: SceneSpec, k: int) -> np.ndarray | None:
    for item in spec.corruption:
        if item.frame == k:
            mask = np.zeros((spec.height, spec.width), dtype=bool)
            bad = int(round(item.fraction * spec.width * spec.height))
            mask.ravel()[:bad] = True
            return mask
    return None


def scene_frame(spec: SceneSpec, texture: np.ndarray, k: int) -> Frame:
    """Fully assembled in-memory frame k (quantized values, mask, sidecar data)."""
    values = np.rint(render_frame(spec, texture, k) * MAX_LEVEL)
    return Frame(
        values=values,
        timestamp=spec.timestamp(k),
        geo=spec.geo,
        corrupt=corruption_mask(spec, k),
    )


def ground_truth_box_path(spec: SceneSpec, init_cx: float, init_cy: float):
    """Where a box centered at (init_cx, init_cy) on frame 0 truly sits each frame."""
    return [spec.flow.forward(init_cx, init_cy, float(k)) for k in range(spec.n_frames)]


def generate(spec: SceneSpec, out_dir) -> GeneratedScene:
    """Write frames, sidecars, a manifest, and the ground-truth table.

    The truth table's reference point is the ridge midpoint when a ridge is
    configured, else the frame center, advected by the scene flow.
    """
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    texture = make_texture(spec.texture, spec.width, spec.height)
    if spec.ridge is not None:
        ref_x, ref_y = spec.ridge.midpoint()
    else:
        ref_x, ref_y = (spec.width - 1) / 2.0, (spec.height - 1) / 2.0
    frame_paths = []
    truth_lines = ["frame,timestamp,true_cx,true_cy,ridge_visibility"]
    for k in range(spec.n_frames):
        frame = scene_frame(spec, texture, k)
        raster_path = out_dir / f"frame_{k:04d}.pgm"
        save_frame(frame, raster_path)
        frame_paths.append(raster_path)
        cx, cy = spec.flow.forward(ref_x, ref_y, float(k))
        vis = spec.ridge.visibility(k) if spec.ridge is not None else 0.0
        truth_lines.append(
            f"{k},{format_rfc3339(frame.timestamp)},{float(cx):.4f},{float(cy):.4f},{vis:.4f}"
        )
    manifest_path = out_dir / "manifest.txt"
    manifest_path.write_text("\n".join(p.name for p in frame_paths) + "\n")
    truth_path = out_dir / "ground_truth.csv"
    truth_path.write_text("\n".join(truth_lines) + "\n")
    return GeneratedScene(manifest_path=manifest_path, truth_path=truth_path, frame_paths=frame_paths)


def _flow_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "uniform":
        return UniformFlow(u=float(d["u"]), v=float(d["v"]))
    if kind == "rotation":
        return RotationFlow(center_x=float(d["center_x"]), center_y=float(d["center_y"]), omega=float(d["omega"]))
    if kind == "shear":
        return ShearFlow(
            u0=float(d["u0"]),
            v0=float(d.get("v0", 0.0)),
            du_dy=float(d["du_dy"]),
            ref_y=float(d.get("ref_y", 0.0)),
        )
    raise SynthError(f"unknown flow kind {kind!r}")


def scene_from_dict(d: dict) -> SceneSpec:
    """Build a SceneSpec from the JSON layout the CLI accepts."""
    try:
        geo = GeoTransform(
            lat0=float(d["lat0"]), lon0=float(d["lon0"]), dlat=float(d["dlat"]), dlon=float(d["dlon"])
        )
        texture_d = d.get("texture", {})
        ridge = None
        if "track" in d and d["track"] is not None:
            t = d["track"]
            ridge = RidgeSpec(
                x0=float(t["x0"]),
                y0=float(t["y0"]),
                x1=float(t["x1"]),
                y1=float(t["y1"]),
                width_px=float(t.get("width_px", 3.0)),
                amplitude=float(t.get("amplitude", 0.3)),
                fade_start=None if t.get("fade_start") is None else int(t["fade_start"]),
                fade_frames=int(t.get("fade_frames", 6)),
            )
        transition = None
        if "transition" in d and d["transition"] is not None:
            tr = d["transition"]
            transition = TransitionSpec(
                start_frame=int(tr["start_frame"]), frames=int(tr["frames"]), depth=float(tr["depth"])
            )
        corruption = tuple(
            CorruptionSpec(frame=int(c["frame"]), fraction=float(c["fraction"]))
            for c in d.get("corruption", [])
        )
        return SceneSpec(
            width=int(d["width"]),
            height=int(d["height"]),
            n_frames=int(d["n_frames"]),
            start_time=parse_rfc3339(str(d["start_time"])),
            geo=geo,
            flow=_flow_from_dict(d["flow"]),
            texture=TextureSpec(
                seed=int(texture_d.get("seed", 0)),
                correlation_px=float(texture_d.get("correlation_px", 5.0)),
                octaves=int(texture_d.get("octaves", 3)),
                contrast=float(texture_d.get("contrast", 0.12)),
                octave_decay=float(texture_d.get("octave_decay", 0.5)),
            ),
            cadence_s=float(d.get("cadence_s", 300.0)),
            ridge=ridge,
            transition=transition,
            corruption=corruption,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SynthError(f"bad scene description: {exc}") from exc
