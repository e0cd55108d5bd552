"""Scene builders and fixture plumbing shared across test modules."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from cloudtrack import raster, synth
from cloudtrack.raster import Frame, GeoTransform

# High-latitude June daytime: the sun stays up for days, so long synthetic
# sequences never cross a diurnal transition unless a test injects one.
POLAR_DAY_GEO = GeoTransform(lat0=78.0, lon0=-150.0, dlat=-0.01, dlon=0.05)
POLAR_DAY_START = datetime(2021, 6, 20, 10, 0, tzinfo=timezone.utc)

# Feature windows need this much clearance from frame edges for the default
# three-level tracker (window half 7 plus gradient halo, doubled per level).
LK_EDGE_MARGIN = 33


def uniform_scene(
    u: float,
    v: float,
    seed: int,
    n_frames: int = 100,
    correlation_px: float = 4.0,
    contrast: float = 0.2,
    octave_decay: float = 0.5,
    cadence_s: float = 300.0,
    box_half: int = 25,
    ridge: synth.RidgeSpec | None = None,
    transition: synth.TransitionSpec | None = None,
    corruption: synth.CorruptionSpec | None = None,
    geo: GeoTransform | None = None,
    start: datetime | None = None,
):
    """A translation scene sized so box + drift keep the LK edge margin.

    Returns (scene_spec, start_cx, start_cy) with the box start placed in the
    upwind corner.
    """
    pad = box_half + LK_EDGE_MARGIN + 12
    width = int(2 * pad + abs(u) * (n_frames - 1)) + 1
    height = int(2 * pad + abs(v) * (n_frames - 1)) + 1
    cx = float(pad) if u >= 0 else width - 1.0 - pad
    cy = float(pad) if v >= 0 else height - 1.0 - pad
    spec = synth.SceneSpec(
        width=width,
        height=height,
        n_frames=n_frames,
        start_time=start or POLAR_DAY_START,
        geo=geo or POLAR_DAY_GEO,
        flow=synth.UniformFlow(u, v),
        texture=synth.TextureSpec(
            seed=seed,
            correlation_px=correlation_px,
            contrast=contrast,
            octave_decay=octave_decay,
        ),
        cadence_s=cadence_s,
        ridge=ridge,
        transition=transition,
        corruption=corruption,
    )
    return spec, cx, cy


def write_sequence(
    out_dir: Path,
    arrays: list[np.ndarray],
    start: datetime | None = None,
    cadence_s: float = 300.0,
    geo: GeoTransform | None = None,
    masks: dict[int, np.ndarray] | None = None,
) -> Path:
    """Write float [0, 1] arrays as a 16-bit frame sequence plus manifest."""
    start = start or POLAR_DAY_START
    geo = geo or POLAR_DAY_GEO
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for k, values in enumerate(arrays):
        quant = np.clip(np.asarray(values) * 65535.0, 0, 65535).astype(np.uint16)
        corrupt = None
        if masks and k in masks:
            corrupt = masks[k]
        frame = Frame(
            values=quant,
            timestamp=start + timedelta(seconds=cadence_s * k),
            geo=geo,
            corrupt=corrupt,
        )
        name = f"frame_{k:04d}.pgm"
        raster.save_frame(frame, out_dir / name)
        names.append(name)
    manifest = out_dir / "manifest.txt"
    manifest.write_text("".join(n + "\n" for n in names), encoding="ascii")
    return manifest


def render_arrays(spec: synth.SceneSpec) -> list[np.ndarray]:
    """All frames of a scene as float arrays without touching disk."""
    texture = synth.make_texture(spec.texture, spec.width, spec.height)
    return [synth.render_frame(spec, texture, k) for k in range(spec.n_frames)]
