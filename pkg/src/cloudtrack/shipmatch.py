"""Match tracked features against vessel position reports."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

from .raster import MissingMetadataError, parse_rfc3339
from .trajectory import haversine_km

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("vessel_id", "timestamp", "lat", "lon")


class ShipMatchError(Exception):
    """AIS input unusable."""


class NoRecordsError(ShipMatchError):
    """The AIS file produced no valid rows."""


@dataclass(frozen=True)
class ShipRecord:
    vessel_id: str
    timestamp: datetime
    lat: float
    lon: float


def load_ais(path) -> list[ShipRecord]:
    """Parse an AIS position CSV (vessel_id, timestamp, lat, lon).

    Rows with unparseable fields or out-of-range coordinates are skipped with
    one logged warning each; a file with no valid rows at all raises
    :class:`NoRecordsError`.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ShipMatchError(f"cannot read AIS file {path}: {exc}") from exc
    reader = csv.DictReader(text.splitlines())
    if reader.fieldnames is None or any(col not in reader.fieldnames for col in REQUIRED_COLUMNS):
        raise ShipMatchError(f"{path}: AIS header must include {', '.join(REQUIRED_COLUMNS)}")
    records = []
    for line_no, row in enumerate(reader, start=2):
        try:
            stamp = parse_rfc3339(row["timestamp"])
            lat = float(row["lat"])
            lon = float(row["lon"])
            vessel = row["vessel_id"].strip()
            if not vessel:
                raise ValueError("empty vessel_id")
            if not -90.0 <= lat <= 90.0:
                raise ValueError(f"latitude {lat} out of range")
            if not -180.0 <= lon <= 360.0:
                raise ValueError(f"longitude {lon} out of range")
        except (KeyError, TypeError, ValueError, MissingMetadataError) as exc:
            logger.warning("%s: skipping AIS row %d: %s", path, line_no, exc)
            continue
        records.append(ShipRecord(vessel_id=vessel, timestamp=stamp, lat=lat, lon=lon))
    if not records:
        raise NoRecordsError(f"{path}: no valid AIS rows")
    return records


def nearest_ship(
    records,
    lat: float,
    lon: float,
    stamp: datetime,
    max_km: float = 50.0,
    max_minutes: float = 60.0,
) -> ShipRecord | None:
    """Closest report within the time window, or None.

    Only reports within ``max_minutes`` of ``stamp`` compete; the winner is
    the smallest great-circle distance, ties broken by smaller time offset and
    then vessel_id, so the result does not depend on input order.  Returns
    None when nothing lands within ``max_km``.
    """
    window_s = max_minutes * 60.0
    best = None
    best_key = None
    for record in records:
        dt = abs((record.timestamp - stamp).total_seconds())
        if dt > window_s:
            continue
        key = (haversine_km(lat, lon, record.lat, record.lon), dt, record.vessel_id)
        if best_key is None or key < best_key:
            best, best_key = record, key
    if best is None or best_key[0] > max_km:
        return None
    return best
