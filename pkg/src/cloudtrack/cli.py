"""Command-line front end.

Subcommands cover the full workflow: band preprocessing, box tracking,
trajectory comparison, synthetic-scene generation, vessel matching, and frame
annotation.  Report paths write the delimited artifacts plus a rendered
figure.  Exit code 0 means no error events; a terminated track or a usage
problem exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, raster, report, shipmatch, synth, tracker, trajectory
from .detect import DetectorParams
from .flow import FlowParams
from .solar import TransitionParams
from .tracker import TrackerConfig, TrackingBox

USAGE_ERROR = 2


class CliError(Exception):
    """Bad inputs surfaced to the user instead of a stack trace."""


def _parse_box(text: str) -> TrackingBox:
    try:
        cx, cy, hw, hh = (float(part) for part in text.split(","))
        return TrackingBox(center_x=cx, center_y=cy, half_width=hw, half_height=hh)
    except ValueError as exc:
        raise CliError(f"--box must be cx,cy,half_width,half_height: {exc}") from exc


def _parse_heights(text: str):
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise CliError(f"--heights must be comma-separated meters: {exc}") from exc


def _tracker_config(args) -> TrackerConfig:
    return TrackerConfig(
        detector=DetectorParams(
            tensor_halfwidth=args.tensor_halfwidth,
            nms_size=args.nms_size,
            quality_frac=args.tq_frac,
            max_features=args.max_features,
        ),
        flow=FlowParams(
            window_halfwidth_x=args.window_half,
            window_halfwidth_y=args.window_half,
            pyramid_levels=args.pyramid_levels,
            max_iterations=args.max_iterations,
            epsilon_stop=args.epsilon_stop,
        ),
        transition=TransitionParams(
            day_threshold=args.sza_day_threshold,
            night_threshold=args.sza_night_threshold,
        ),
        dqf_max=args.dqf_max,
        gap_max_s=args.gap_max_minutes * 60.0,
    )


def cmd_preprocess(args) -> int:
    if len(args.manifest) != 2:
        raise CliError("preprocess needs exactly two --manifest arguments (band A, band B)")
    manifest_a = raster.load_manifest(args.manifest[0])
    manifest_b = raster.load_manifest(args.manifest[1])
    if len(manifest_a) != len(manifest_b):
        raise CliError(f"band manifests differ in length: {len(manifest_a)} vs {len(manifest_b)}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for index, ((raster_a, sidecar_a), (raster_b, sidecar_b)) in enumerate(
        zip(manifest_a.entries, manifest_b.entries)
    ):
        frame_a = raster.load_frame(raster_a, sidecar_a)
        frame_b = raster.load_frame(raster_b, sidecar_b)
        equalized = raster.equalize_histogram(raster.band_difference(frame_a, frame_b))
        name = f"eq_{index:04d}.pgm"
        raster.save_frame(equalized, out_dir / name)
        names.append(name)
    (out_dir / "manifest.txt").write_text("\n".join(names) + "\n")
    print(f"wrote {len(names)} equalized difference frames to {out_dir}")
    return 0


def cmd_track(args) -> int:
    manifest = raster.load_manifest(args.manifest[0])
    box = _parse_box(args.box)
    config = _tracker_config(args)
    result = tracker.run_sequence(
        manifest,
        box,
        config,
        visibility_floor=args.visibility_floor,
        visibility_dwell=args.visibility_dwell,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tracker.write_box_path_csv(result.rows, out_dir / "box_path.csv")
    tracker.write_events_ndjson(result.events, out_dir / "events.ndjson")
    (out_dir / "report.json").write_text(json.dumps(result.report.to_dict(), sort_keys=True) + "\n")
    report.save_track_figure(result.rows, args.visibility_floor, out_dir / "track_report.png")
    print(
        f"track ran {result.report.duration_hours:.2f} h over {len(result.rows)} frames, "
        f"ended {result.report.end_reason}"
    )
    return 0 if result.report.end_reason in (tracker.END_OF_DATA, tracker.VISIBILITY_LOST) else 1


def cmd_compare(args) -> int:
    rows = tracker.read_box_path_csv(args.track)
    field = trajectory.load_windfield(args.wind)
    heights = _parse_heights(args.heights)
    if not heights:
        raise CliError("--heights must list at least one level")
    t0 = rows[0].timestamp
    ensemble = trajectory.run_ensemble(
        field,
        rows[0].lat,
        rows[0].lon,
        t0,
        heights,
        duration_s=args.duration_hours * 3600.0,
        step_s=args.step_seconds,
    )
    box_geo = [(r.timestamp, r.lat, r.lon) for r in rows]
    series_by_height = {}
    truncations = {}
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for traj in ensemble.trajectories:
        series_by_height[traj.height_m] = trajectory.divergence_series(traj, box_geo)
        if traj.truncation_reason:
            truncations[str(traj.height_m)] = traj.truncation_reason
        trajectory.write_trajectory_csv(traj, out_dir / f"trajectory_{int(traj.height_m):04d}m.csv")
    lines = ["height_m,hour,timestamp,distance_km"]
    for height in sorted(series_by_height):
        for stamp, km in series_by_height[height]:
            hour = (stamp - t0).total_seconds() / 3600.0
            lines.append(f"{height:.1f},{hour:.2f},{raster.format_rfc3339(stamp)},{km:.4f}")
    (out_dir / "divergence.csv").write_text("\n".join(lines) + "\n")
    summary = trajectory.summarize_divergence(series_by_height, args.divergence_threshold_km)
    if truncations:
        summary["truncations"] = truncations
    (out_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True) + "\n")
    report.save_divergence_figure(series_by_height, args.divergence_threshold_km, out_dir / "divergence.png")
    best = summary["best_height_m"]
    print(f"best matching height: {best if best is None else f'{best:.0f} m'}")
    return 0


def cmd_synth(args) -> int:
    try:
        description = json.loads(Path(args.scene).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read scene description: {exc}") from exc
    spec = synth.scene_from_dict(description)
    if args.seed is not None:
        spec.texture = synth.TextureSpec(
            seed=args.seed,
            correlation_px=spec.texture.correlation_px,
            octaves=spec.texture.octaves,
            contrast=spec.texture.contrast,
            octave_decay=spec.texture.octave_decay,
        )
    scene = synth.generate(spec, args.out)
    print(f"wrote {len(scene.frame_paths)} frames, manifest {scene.manifest_path}")
    return 0


def cmd_match(args) -> int:
    records = shipmatch.load_ais(args.ais)
    try:
        lat_text, lon_text = args.point.split(",")
        lat, lon = float(lat_text), float(lon_text)
    except ValueError as exc:
        raise CliError(f"--point must be lat,lon: {exc}") from exc
    stamp = raster.parse_rfc3339(args.time)
    record = shipmatch.nearest_ship(records, lat, lon, stamp, max_km=args.max_km, max_minutes=args.max_minutes)
    if record is None:
        print("null")
    else:
        print(
            json.dumps(
                {
                    "vessel_id": record.vessel_id,
                    "timestamp": raster.format_rfc3339(record.timestamp),
                    "lat": record.lat,
                    "lon": record.lon,
                    "distance_km": trajectory.haversine_km(lat, lon, record.lat, record.lon),
                },
                sort_keys=True,
            )
        )
    return 0


def _draw_box(grid: np.ndarray, box: TrackingBox, thickness: int = 2, level: int = 255) -> None:
    left, top, right, bottom = box.pixel_bounds()
    height, width = grid.shape
    left, right = max(0, left), min(width - 1, right)
    top, bottom = max(0, top), min(height - 1, bottom)
    if left > right or top > bottom:
        return
    for t in range(thickness):
        if top + t <= bottom:
            grid[top + t, left : right + 1] = level
        if bottom - t >= top:
            grid[bottom - t, left : right + 1] = level
        if left + t <= right:
            grid[top : bottom + 1, left + t] = level
        if right - t >= left:
            grid[top : bottom + 1, right - t] = level


def cmd_render(args) -> int:
    manifest = raster.load_manifest(args.manifest[0])
    rows = tracker.read_box_path_csv(args.track)
    by_time = {row.timestamp: row for row in rows}
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    missing = 0
    for index, (raster_path, sidecar_path) in enumerate(manifest.entries):
        frame = raster.load_frame(raster_path, sidecar_path)
        # 16-bit to 8-bit: 65535 / 257 == 255 exactly.
        scaled = np.rint(frame.values / 257.0).clip(0, 255)
        row = by_time.get(frame.timestamp)
        if row is None:
            missing += 1
            print(f"warning: no box-path row for {raster.format_rfc3339(frame.timestamp)}", file=sys.stderr)
        else:
            box = TrackingBox(
                center_x=row.center_x,
                center_y=row.center_y,
                half_width=args.half_width,
                half_height=args.half_height,
            )
            _draw_box(scaled, box)
        raster.write_pgm(out_dir / f"annotated_{index:04d}.pgm", scaled, maxval=255)
    print(f"rendered {len(manifest.entries)} frames ({missing} without box rows) to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cloudtrack",
        description="Track linear cloud features through raster sequences and compare against wind advection.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_manifest(p, twice=False):
        p.add_argument(
            "--manifest",
            action="append",
            required=True,
            help="newline-delimited raster list" + (" (give twice: band A then band B)" if twice else ""),
        )

    p = sub.add_parser("preprocess", help="band difference + histogram equalization")
    add_manifest(p, twice=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("track", help="follow a feature box through a sequence")
    add_manifest(p)
    p.add_argument("--box", required=True, help="cx,cy,half_width,half_height in pixels")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sza-day-threshold", type=float, default=84.0, help="zenith below which pixels are daylit")
    p.add_argument("--sza-night-threshold", type=float, default=96.0, help="zenith above which pixels are dark")
    p.add_argument("--dqf-max", type=float, default=0.02, help="max corrupt-pixel fraction before a frame is skipped")
    p.add_argument("--gap-max-minutes", type=float, default=60.0, help="max gap between usable frames")
    p.add_argument("--visibility-floor", type=float, default=1.0, help="score below which the feature counts as faded")
    p.add_argument("--visibility-dwell", type=int, default=12, help="consecutive faded frames that end persistence")
    p.add_argument("--tensor-halfwidth", type=int, default=3, help="structure-tensor window half extent")
    p.add_argument("--nms-size", type=int, default=3, help="non-max suppression window side")
    p.add_argument("--tq-frac", type=float, default=0.2, help="quality threshold as fraction of max")
    p.add_argument("--max-features", type=int, default=50, help="feature cap per box")
    p.add_argument("--window-half", type=int, default=7, help="flow matching window half extent")
    p.add_argument("--pyramid-levels", type=int, default=3)
    p.add_argument("--max-iterations", type=int, default=10)
    p.add_argument("--epsilon-stop", type=float, default=0.03, help="stop when the update norm drops below this")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("compare", help="advect parcels and measure divergence from a tracked path")
    p.add_argument("--track", required=True, help="box_path.csv from the track subcommand")
    p.add_argument("--wind", required=True, help="wind field header JSON")
    p.add_argument("--heights", default="0,200,400,600", help="release heights in meters, comma-separated")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--divergence-threshold-km", type=float, default=25.0)
    p.add_argument("--duration-hours", type=float, default=24.0)
    p.add_argument("--step-seconds", type=float, default=300.0)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", help="generate a synthetic scene with ground truth")
    p.add_argument("--scene", required=True, help="scene description JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the texture seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("match", help="nearest vessel report to a point and time")
    p.add_argument("--ais", required=True, help="AIS CSV (vessel_id,timestamp,lat,lon)")
    p.add_argument("--point", required=True, help="lat,lon")
    p.add_argument("--time", required=True, help="RFC 3339 timestamp")
    p.add_argument("--max-km", type=float, default=50.0)
    p.add_argument("--max-minutes", type=float, default=60.0)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("render", help="write 8-bit frames with the tracked box outlined")
    add_manifest(p)
    p.add_argument("--track", required=True, help="box_path.csv from the track subcommand")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--half-width", type=float, default=25.0, help="box half width for the outline")
    p.add_argument("--half-height", type=float, default=25.0, help="box half height for the outline")
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        CliError,
        raster.RasterError,
        tracker.TrackerError,
        trajectory.TrajectoryError,
        shipmatch.ShipMatchError,
        synth.SynthError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
