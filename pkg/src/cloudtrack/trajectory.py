"""Parcel advection through gridded wind fields, and path comparison.

Winds live on a regular lat/lon/height/time grid and are interpolated
multilinearly across all four axes.  Parcels advance with a two-stage
predictor-corrector; positions are converted between meters and degrees with
a fixed 111320 m per degree of latitude (and per degree of longitude at the
equator, scaled by cos latitude).  The haversine radius is chosen so one
degree of great-circle arc is exactly that 111320 m.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .raster import format_rfc3339, parse_rfc3339

METERS_PER_DEGREE = 111320.0
EARTH_RADIUS_KM = METERS_PER_DEGREE * 180.0 / math.pi / 1000.0
POLE_GUARD_DEG = 89.9
DEFAULT_HEIGHTS_M = (0.0, 200.0, 400.0, 600.0)


class TrajectoryError(Exception):
    """Advection preconditions violated."""


class OutOfDomainError(TrajectoryError):
    """A query or parcel position leaves the wind field's grid."""


@dataclass(frozen=True)
class TrajectoryPoint:
    timestamp: datetime
    lat: float
    lon: float
    height_m: float


@dataclass
class Trajectory:
    """Hourly parcel positions at one height.

    ``truncation_reason`` is set when the parcel left the wind domain before
    the requested duration; the final reachable position is still recorded.
    """

    height_m: float
    points: list
    truncation_reason: str | None = None


@dataclass
class EnsembleRun:
    """One trajectory per release height, in the order requested."""

    trajectories: list

    def by_height(self, height_m: float) -> Trajectory:
        for traj in self.trajectories:
            if traj.height_m == height_m:
                return traj
        raise KeyError(height_m)


@dataclass
class WindField:
    """u/v wind components on a (time, height, lat, lon) grid, m/s.

    Latitude may arrive in either monotone direction and is normalized to
    increasing; longitudes must be strictly increasing (no wraparound).
    """

    lats: np.ndarray
    lons: np.ndarray
    heights: np.ndarray
    times: list
    u: np.ndarray
    v: np.ndarray
    _time_s: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.lats = np.asarray(self.lats, dtype=np.float64)
        self.lons = np.asarray(self.lons, dtype=np.float64)
        self.heights = np.asarray(self.heights, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.lats.size > 1 and self.lats[0] > self.lats[-1]:
            self.lats = self.lats[::-1].copy()
            self.u = self.u[:, :, ::-1, :].copy()
            self.v = self.v[:, :, ::-1, :].copy()
        for name, axis in (("lats", self.lats), ("lons", self.lons), ("heights", self.heights)):
            if axis.ndim != 1 or axis.size < 1 or (axis.size > 1 and not np.all(np.diff(axis) > 0)):
                raise TrajectoryError(f"wind axis {name} must be 1-D and strictly increasing")
        stamps = [t.astimezone(timezone.utc) for t in self.times]
        self._time_s = np.array([t.timestamp() for t in stamps], dtype=np.float64)
        if self._time_s.size < 1 or (self._time_s.size > 1 and not np.all(np.diff(self._time_s) > 0)):
            raise TrajectoryError("wind times must strictly increase")
        expected = (len(self.times), self.heights.size, self.lats.size, self.lons.size)
        for name, grid in (("u", self.u), ("v", self.v)):
            if grid.shape != expected:
                raise TrajectoryError(f"wind component {name} has shape {grid.shape}, expected {expected}")


def _locate(axis: np.ndarray, value: float, name: str):
    # Bracketing interval and fractional position along one grid axis.
    if axis.size == 1:
        if value != axis[0]:
            raise OutOfDomainError(f"{name} {value} outside single-level axis at {axis[0]}")
        return 0, 0, 0.0
    if value < axis[0] or value > axis[-1]:
        raise OutOfDomainError(f"{name} {value} outside [{axis[0]}, {axis[-1]}]")
    idx = min(int(np.searchsorted(axis, value, side="right")) - 1, axis.size - 2)
    weight = (value - axis[idx]) / (axis[idx + 1] - axis[idx])
    return idx, idx + 1, float(weight)


def interpolate_wind(field: WindField, lat: float, lon: float, height_m: float, stamp: datetime):
    """Multilinear (u, v) at an arbitrary point inside the grid's hull."""
    ti0, ti1, tw = _locate(field._time_s, stamp.astimezone(timezone.utc).timestamp(), "time")
    hi0, hi1, hw = _locate(field.heights, float(height_m), "height")
    yi0, yi1, yw = _locate(field.lats, float(lat), "latitude")
    xi0, xi1, xw = _locate(field.lons, float(lon), "longitude")
    u = 0.0
    v = 0.0
    for ti, tf in ((ti0, 1.0 - tw), (ti1, tw)):
        if tf == 0.0:
            continue
        for hi, hf in ((hi0, 1.0 - hw), (hi1, hw)):
            if hf == 0.0:
                continue
            for yi, yf in ((yi0, 1.0 - yw), (yi1, yw)):
                if yf == 0.0:
                    continue
                for xi, xf in ((xi0, 1.0 - xw), (xi1, xw)):
                    if xf == 0.0:
                        continue
                    w = tf * hf * yf * xf
                    u += w * field.u[ti, hi, yi, xi]
                    v += w * field.v[ti, hi, yi, xi]
    return u, v


def _heun_step(field, lat, lon, height_m, stamp, dt_s):
    # Predictor-corrector; both meter-to-degree conversions use the step's
    # starting latitude.
    if abs(lat) >= POLE_GUARD_DEG:
        raise OutOfDomainError(f"parcel at latitude {lat} is too close to a pole")
    cos_lat = math.cos(math.radians(lat))
    u1, v1 = interpolate_wind(field, lat, lon, height_m, stamp)
    lat_p = lat + v1 * dt_s / METERS_PER_DEGREE
    lon_p = lon + u1 * dt_s / (METERS_PER_DEGREE * cos_lat)
    u2, v2 = interpolate_wind(field, lat_p, lon_p, height_m, stamp + timedelta(seconds=dt_s))
    lat_n = lat + 0.5 * (v1 + v2) * dt_s / METERS_PER_DEGREE
    lon_n = lon + 0.5 * (u1 + u2) * dt_s / (METERS_PER_DEGREE * cos_lat)
    if abs(lat_n) >= POLE_GUARD_DEG:
        raise OutOfDomainError(f"parcel crossed the pole guard at latitude {lat_n}")
    return lat_n, lon_n


def advect(
    field: WindField,
    start_lat: float,
    start_lon: float,
    t0: datetime,
    height_m: float,
    duration_s: float,
    step_s: float = 300.0,
) -> Trajectory:
    """Advect one parcel at a fixed height, recording hourly positions.

    ``step_s`` must divide one hour (and the duration) so hourly samples land
    exactly on integration steps.  If the parcel leaves the wind domain the
    trajectory is truncated at the last reachable position, with the reason
    recorded.
    """
    step_s = float(step_s)
    duration_s = float(duration_s)
    if step_s <= 0 or step_s > 3600.0:
        raise TrajectoryError("step must be in (0, 3600] seconds")
    if 3600.0 % step_s != 0.0:
        raise TrajectoryError("step must divide one hour exactly")
    if duration_s < 0 or duration_s % step_s != 0.0:
        raise TrajectoryError("duration must be a nonnegative multiple of the step")
    if field.heights.size > 1 and not (field.heights[0] <= height_m <= field.heights[-1]):
        raise OutOfDomainError(f"height {height_m} outside wind levels [{field.heights[0]}, {field.heights[-1]}]")
    lat, lon = float(start_lat), float(start_lon)
    points = [TrajectoryPoint(timestamp=t0, lat=lat, lon=lon, height_m=float(height_m))]
    reason = None
    elapsed = 0.0
    while elapsed < duration_s:
        stamp = t0 + timedelta(seconds=elapsed)
        try:
            lat, lon = _heun_step(field, lat, lon, height_m, stamp, step_s)
        except OutOfDomainError as exc:
            reason = str(exc)
            break
        elapsed += step_s
        if elapsed % 3600.0 == 0.0:
            points.append(
                TrajectoryPoint(timestamp=t0 + timedelta(seconds=elapsed), lat=lat, lon=lon, height_m=float(height_m))
            )
    if reason is not None and points[-1].timestamp != t0 + timedelta(seconds=elapsed):
        points.append(
            TrajectoryPoint(timestamp=t0 + timedelta(seconds=elapsed), lat=lat, lon=lon, height_m=float(height_m))
        )
    return Trajectory(height_m=float(height_m), points=points, truncation_reason=reason)


def run_ensemble(
    field: WindField,
    start_lat: float,
    start_lon: float,
    t0: datetime,
    heights_m=None,
    *,
    duration_s: float,
    step_s: float = 300.0,
) -> EnsembleRun:
    """One trajectory per release height (default 0, 200, 400, 600 m).

    Every height must sit within the field's level range up front; a bad
    height fails the whole ensemble rather than silently clamping.
    """
    heights = [float(h) for h in (DEFAULT_HEIGHTS_M if heights_m is None else heights_m)]
    if not heights:
        raise TrajectoryError("ensemble needs at least one height")
    lo, hi = float(field.heights[0]), float(field.heights[-1])
    for h in heights:
        inside = (h == lo) if field.heights.size == 1 else (lo <= h <= hi)
        if not inside:
            raise OutOfDomainError(f"height {h} outside wind levels [{lo}, {hi}]")
    return EnsembleRun(
        trajectories=[advect(field, start_lat, start_lon, t0, h, duration_s, step_s) for h in heights]
    )


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in km (sphere of radius EARTH_RADIUS_KM)."""
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = phi2 - phi1
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def divergence_series(trajectory, box_path):
    """Distance between a trajectory and a tracked box path, hourly.

    ``box_path`` is a time-sorted sequence of (timestamp, lat, lon); it is
    linearly interpolated at each trajectory sample that falls inside its
    time range (endpoints included).  Returns [(timestamp, km)].
    """
    points = trajectory.points if isinstance(trajectory, Trajectory) else list(trajectory)
    path = [(t, float(la), float(lo)) for t, la, lo in box_path]
    if not path:
        raise TrajectoryError("box path is empty")
    times = [t for t, _, _ in path]
    if any(later <= earlier for earlier, later in zip(times, times[1:])):
        raise TrajectoryError("box path timestamps must strictly increase")
    series = []
    for point in points:
        if point.timestamp < times[0] or point.timestamp > times[-1]:
            continue
        idx = min(bisect_right(times, point.timestamp) - 1, len(times) - 2) if len(times) > 1 else 0
        if len(times) == 1:
            lat, lon = path[0][1], path[0][2]
        else:
            t_lo, la_lo, lo_lo = path[idx]
            t_hi, la_hi, lo_hi = path[idx + 1]
            w = (point.timestamp - t_lo).total_seconds() / (t_hi - t_lo).total_seconds()
            lat = la_lo + w * (la_hi - la_lo)
            lon = lo_lo + w * (lo_hi - lo_lo)
        series.append((point.timestamp, haversine_km(point.lat, point.lon, lat, lon)))
    if not series:
        raise TrajectoryError("trajectory and box path time ranges do not overlap")
    return series


def summarize_divergence(series_by_height: dict, threshold_km: float) -> dict:
    """Per-height first-exceed hour and maximum separation, plus best height.

    The best height is the one whose separation stays under the threshold
    longest (never exceeding beats any finite exceed time); ties fall to the
    smaller maximum separation, then the lower height.
    """
    rows = []
    for height in sorted(series_by_height):
        series = series_by_height[height]
        first_exceed = None
        max_km = 0.0
        t0 = series[0][0] if series else None
        for stamp, km in series:
            max_km = max(max_km, km)
            if first_exceed is None and km > threshold_km:
                first_exceed = (stamp - t0).total_seconds() / 3600.0
        rows.append({"height_m": height, "first_exceed_hour": first_exceed, "max_km": max_km})
    best = None
    if rows:
        best = max(
            rows,
            key=lambda r: (
                math.inf if r["first_exceed_hour"] is None else r["first_exceed_hour"],
                -r["max_km"],
                -r["height_m"],
            ),
        )["height_m"]
    return {"threshold_km": threshold_km, "per_height": rows, "best_height_m": best}


def write_trajectory_csv(trajectory: Trajectory, path) -> None:
    lines = ["timestamp,lat,lon,height_m"]
    for p in trajectory.points:
        lines.append(f"{format_rfc3339(p.timestamp)},{p.lat:.6f},{p.lon:.6f},{p.height_m:.1f}")
    Path(path).write_text("\n".join(lines) + "\n")


def save_windfield(field: WindField, header_path, payload_name: str | None = None) -> None:
    """Write the JSON header plus the raw little-endian float32 payload.

    Payload layout is the u block then the v block, each C-ordered as
    [time][height][lat][lon].
    """
    header_path = Path(header_path)
    payload_name = payload_name or header_path.stem + ".bin"
    header = {
        "lats": field.lats.tolist(),
        "lons": field.lons.tolist(),
        "heights_m": field.heights.tolist(),
        "times": [format_rfc3339(t) for t in field.times],
        "payload": payload_name,
    }
    payload = field.u.astype("<f4").tobytes() + field.v.astype("<f4").tobytes()
    (header_path.parent / payload_name).write_bytes(payload)
    header_path.write_text(json.dumps(header, sort_keys=True) + "\n")


def load_windfield(header_path) -> WindField:
    header_path = Path(header_path)
    try:
        header = json.loads(header_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise TrajectoryError(f"cannot read wind header {header_path}: {exc}") from exc
    try:
        lats = np.array(header["lats"], dtype=np.float64)
        lons = np.array(header["lons"], dtype=np.float64)
        heights = np.array(header["heights_m"], dtype=np.float64)
        times = [parse_rfc3339(t) for t in header["times"]]
        payload_name = header["payload"]
    except KeyError as exc:
        raise TrajectoryError(f"wind header missing field {exc}") from exc
    raw = np.frombuffer((header_path.parent / payload_name).read_bytes(), dtype="<f4")
    count = len(times) * heights.size * lats.size * lons.size
    if raw.size != 2 * count:
        raise TrajectoryError(f"wind payload has {raw.size} samples, expected {2 * count}")
    shape = (len(times), heights.size, lats.size, lons.size)
    return WindField(
        lats=lats,
        lons=lons,
        heights=heights,
        times=times,
        u=raw[:count].reshape(shape).astype(np.float64),
        v=raw[count:].reshape(shape).astype(np.float64),
    )
