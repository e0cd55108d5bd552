"""Solar zenith geometry and the day/night transition state machine.

A reduced ephemeris (low-order trigonometric series for declination and the
equation of time) gives the zenith angle to well under a third of a degree
across 1950-2050, which is all the gating logic needs.  Transition decisions
look at the zenith extremes over the two halves of a tracking box's perimeter
and at how those extremes are moving between frames.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .raster import GeoTransform


class SolarError(Exception):
    """Solar-geometry preconditions violated."""


class DiurnalState(enum.Enum):
    DAY = "Day"
    NIGHT = "Night"
    SUNRISE_TRANSITION = "SunriseTransition"
    SUNSET_TRANSITION = "SunsetTransition"


TRANSITION_STATES = frozenset({DiurnalState.SUNRISE_TRANSITION, DiurnalState.SUNSET_TRANSITION})


@dataclass(frozen=True)
class TransitionParams:
    """Zenith thresholds in degrees.

    ``day_threshold`` is the angle below which a pixel is firmly daylit;
    ``night_threshold`` the angle above which it is firmly dark.  The band
    between them is the terminator region where tracking is unreliable.
    """

    day_threshold: float = 84.0
    night_threshold: float = 96.0

    def __post_init__(self) -> None:
        if not 0.0 < self.day_threshold < self.night_threshold < 180.0:
            raise ValueError("thresholds must satisfy 0 < day < night < 180")


@dataclass(frozen=True)
class PerimeterAngles:
    """Zenith angles over a box perimeter, split at the box center's column.

    ``right`` holds the angles of perimeter pixels with x strictly greater
    than the center, ``left`` everything else.
    """

    right: np.ndarray
    left: np.ndarray

    @property
    def min_right(self) -> float:
        return float(np.min(self.right))

    @property
    def max_right(self) -> float:
        return float(np.max(self.right))

    @property
    def min_left(self) -> float:
        return float(np.min(self.left))

    @property
    def max_left(self) -> float:
        return float(np.max(self.left))


def _julian_centuries(stamp: datetime) -> float:
    unix = stamp.astimezone(timezone.utc).timestamp()
    julian_day = unix / 86400.0 + 2440587.5
    return (julian_day - 2451545.0) / 36525.0


def solar_zenith(lat_deg: float, lon_deg: float, stamp: datetime) -> float:
    """Solar zenith angle in degrees (no refraction), longitude east-positive."""
    if not -90.0 <= lat_deg <= 90.0:
        raise SolarError(f"latitude {lat_deg} outside [-90, 90]")
    if stamp.tzinfo is None:
        raise SolarError("timestamp must be timezone-aware")
    t = _julian_centuries(stamp)

    mean_long = math.radians((280.46646 + t * (36000.76983 + 0.0003032 * t)) % 360.0)
    mean_anom = math.radians(357.52911 + t * (35999.05029 - 0.0001537 * t))
    eccentricity = 0.016708634 - t * (0.000042037 + 0.0000001267 * t)
    center = (
        math.sin(mean_anom) * (1.914602 - t * (0.004817 + 0.000014 * t))
        + math.sin(2 * mean_anom) * (0.019993 - 0.000101 * t)
        + math.sin(3 * mean_anom) * 0.000289
    )
    true_long_deg = math.degrees(mean_long) + center
    node = math.radians(125.04 - 1934.136 * t)
    apparent_long = math.radians(true_long_deg - 0.00569 - 0.00478 * math.sin(node))

    mean_obliquity = 23.0 + (26.0 + (21.448 - t * (46.815 + t * (0.00059 - t * 0.001813))) / 60.0) / 60.0
    obliquity = math.radians(mean_obliquity + 0.00256 * math.cos(node))

    declination = math.asin(math.sin(obliquity) * math.sin(apparent_long))

    half_obl_tan = math.tan(obliquity / 2.0)
    y = half_obl_tan * half_obl_tan
    eot_minutes = 4.0 * math.degrees(
        y * math.sin(2.0 * mean_long)
        - 2.0 * eccentricity * math.sin(mean_anom)
        + 4.0 * eccentricity * y * math.sin(mean_anom) * math.cos(2.0 * mean_long)
        - 0.5 * y * y * math.sin(4.0 * mean_long)
        - 1.25 * eccentricity * eccentricity * math.sin(2.0 * mean_anom)
    )

    utc = stamp.astimezone(timezone.utc)
    minutes_of_day = utc.hour * 60.0 + utc.minute + (utc.second + utc.microsecond / 1e6) / 60.0
    true_solar_minutes = (minutes_of_day + eot_minutes + 4.0 * lon_deg) % 1440.0
    hour_angle = math.radians(true_solar_minutes / 4.0 - 180.0)

    lat = math.radians(lat_deg)
    cos_zenith = math.sin(lat) * math.sin(declination) + math.cos(lat) * math.cos(declination) * math.cos(hour_angle)
    return math.degrees(math.acos(max(-1.0, min(1.0, cos_zenith))))


def perimeter_angles(box, geo: GeoTransform, stamp: datetime) -> PerimeterAngles:
    """Zenith angle at every pixel of a box's one-pixel perimeter ring.

    The box is anything exposing center_x/center_y/half_width/half_height in
    pixels.  Pixels right of the center column form the ``right`` group.  A
    box thinner than two pixels on a side has no usable perimeter split.
    """
    left_col = int(round(box.center_x - box.half_width))
    right_col = int(round(box.center_x + box.half_width))
    top_row = int(round(box.center_y - box.half_height))
    bottom_row = int(round(box.center_y + box.half_height))
    if right_col - left_col < 1 or bottom_row - top_row < 1:
        raise SolarError("box too thin for a perimeter split")
    ring = []
    for x in range(left_col, right_col + 1):
        ring.append((x, top_row))
        ring.append((x, bottom_row))
    for y in range(top_row + 1, bottom_row):
        ring.append((left_col, y))
        ring.append((right_col, y))
    xs = np.array([p[0] for p in ring], dtype=np.float64)
    ys = np.array([p[1] for p in ring], dtype=np.float64)
    lats, lons = geo.pixel_to_geo(xs, ys)
    angles = np.array([solar_zenith(la, lo, stamp) for la, lo in zip(lats, lons)])
    on_right = xs > box.center_x
    if not on_right.any() or on_right.all():
        raise SolarError("perimeter split left one side empty")
    return PerimeterAngles(right=angles[on_right], left=angles[~on_right])


def transition_state(
    angles: PerimeterAngles,
    params: TransitionParams,
    prev: PerimeterAngles | None = None,
) -> DiurnalState:
    """Classify a frame as Day, Night, or a terminator crossing.

    A sunrise needs the right-side minimum inside the terminator band, the
    left-side maximum still dark, and that right-side minimum strictly falling
    since the previous frame; sunset mirrors it with a strictly rising
    right-side maximum.  Without slope context (first frame, or extremes
    unchanged) the band collapses to Day/Night by the mean angle.  Every
    input maps to exactly one state.
    """
    day_max = params.day_threshold
    night_min = params.night_threshold
    sunrise_band = angles.min_right < night_min and angles.max_left > day_max
    sunset_band = angles.max_right > day_max and angles.min_left < night_min
    if prev is not None:
        if sunrise_band and angles.min_right < prev.min_right:
            return DiurnalState.SUNRISE_TRANSITION
        if sunset_band and angles.max_right > prev.max_right:
            return DiurnalState.SUNSET_TRANSITION
    all_angles = np.concatenate([angles.right, angles.left])
    if float(all_angles.max()) <= day_max:
        return DiurnalState.DAY
    if float(all_angles.min()) >= night_min:
        return DiurnalState.NIGHT
    # Terminator band with no resolving slope: fall back on the mean angle.
    return DiurnalState.DAY if float(all_angles.mean()) < 90.0 else DiurnalState.NIGHT
