"""Geo-referenced raster frames.

File IO for 16-bit graymaps plus their JSON sidecars, the calibration
arithmetic applied before feature work (band differencing, histogram
equalization), and the equirectangular pixel/geodetic mapping used by every
downstream stage.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

MAX_LEVEL = 65535


class RasterError(Exception):
    """Base class for raster-layer failures."""


class MissingMetadataError(RasterError):
    """A sidecar is missing a required field."""


class ShapeMismatchError(RasterError):
    """Two grids that must align elementwise do not."""


class ManifestError(RasterError):
    """A sequence manifest is unreadable or inconsistent."""


def parse_rfc3339(text: str) -> datetime:
    """Parse an RFC 3339 timestamp into an aware UTC datetime."""
    cleaned = text.strip()
    if cleaned.endswith(("Z", "z")):
        cleaned = cleaned[:-1] + "+00:00"
    try:
        stamp = datetime.fromisoformat(cleaned)
    except ValueError as exc:
        raise MissingMetadataError(f"bad timestamp {text!r}") from exc
    if stamp.tzinfo is None:
        raise MissingMetadataError(f"timestamp {text!r} lacks a UTC offset")
    return stamp.astimezone(timezone.utc)


def format_rfc3339(stamp: datetime) -> str:
    """Render an aware datetime as RFC 3339 with a Z suffix."""
    stamp = stamp.astimezone(timezone.utc)
    if stamp.microsecond:
        return stamp.strftime("%Y-%m-%dT%H:%M:%S.%f").rstrip("0") + "Z"
    return stamp.strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class GeoTransform:
    """Equirectangular mapping between pixel and geodetic coordinates.

    ``lat0``/``lon0`` are the coordinates of pixel (0, 0); ``dlat``/``dlon``
    are degrees per pixel step in y and x.  Both steps must be nonzero so the
    mapping is invertible.
    """

    lat0: float
    lon0: float
    dlat: float
    dlon: float

    def __post_init__(self) -> None:
        if self.dlat == 0.0 or self.dlon == 0.0:
            raise ValueError("degenerate GeoTransform: dlat and dlon must be nonzero")

    def pixel_to_geo(self, x, y):
        """Map pixel coordinates (x right, y down) to (lat, lon) degrees."""
        return self.lat0 + np.asarray(y) * self.dlat, self.lon0 + np.asarray(x) * self.dlon

    def geo_to_pixel(self, lat, lon):
        """Inverse of :meth:`pixel_to_geo`."""
        return (np.asarray(lon) - self.lon0) / self.dlon, (np.asarray(lat) - self.lat0) / self.dlat


@dataclass
class Frame:
    """One raster observation: values, acquisition time, geolocation, quality.

    ``values`` is float64 so calibration arithmetic (differences may be
    negative) loses nothing; ``corrupt`` marks pixels whose radiometry cannot
    be trusted.
    """

    values: np.ndarray
    timestamp: datetime
    geo: GeoTransform
    corrupt: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or min(self.values.shape) < 2:
            raise ShapeMismatchError(f"frame must be 2-D and at least 2x2, got {self.values.shape}")
        if self.corrupt is None:
            self.corrupt = np.zeros(self.values.shape, dtype=bool)
        self.corrupt = np.asarray(self.corrupt, dtype=bool)
        if self.corrupt.shape != self.values.shape:
            raise ShapeMismatchError(
                f"quality mask shape {self.corrupt.shape} does not match values {self.values.shape}"
            )
        if self.timestamp.tzinfo is None:
            raise MissingMetadataError("frame timestamp must be timezone-aware")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _read_pgm_tokens(raw: bytes):
    # Header tokens may be separated by any whitespace; '#' starts a comment
    # that runs to end of line.  Returns the tokens and the offset of the
    # first data byte (one whitespace byte after the maxval token).
    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(raw):
            raise RasterError("truncated graymap header")
        c = raw[i : i + 1]
        if c == b"#":
            while i < len(raw) and raw[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(raw) and not raw[j : j + 1].isspace() and raw[j : j + 1] != b"#":
                j += 1
            tokens.append(raw[i:j])
            i = j
    return tokens, i + 1


def read_pgm(path) -> np.ndarray:
    """Read a portable graymap (binary P5 or plain P2).

    Samples wider than one byte are big-endian, per the format.  Returns
    uint16 for 16-bit files and uint8 for 8-bit ones.
    """
    raw = Path(path).read_bytes()
    tokens, data_start = _read_pgm_tokens(raw)
    magic = tokens[0]
    if magic not in (b"P5", b"P2"):
        raise RasterError(f"{path}: not a graymap (magic {magic!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise RasterError(f"{path}: malformed graymap header") from exc
    if width < 1 or height < 1 or not (0 < maxval <= MAX_LEVEL):
        raise RasterError(f"{path}: bad graymap dimensions or maxval")
    count = width * height
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        data = raw[data_start : data_start + count * dtype.itemsize]
        if len(data) != count * dtype.itemsize:
            raise RasterError(f"{path}: truncated graymap payload")
        grid = np.frombuffer(data, dtype=dtype).reshape(height, width)
        return grid.astype(np.uint16 if maxval > 255 else np.uint8)
    values = np.array(raw[data_start - 1 :].split(), dtype=np.int64)
    if values.size != count:
        raise RasterError(f"{path}: expected {count} samples, found {values.size}")
    out_dtype = np.uint16 if maxval > 255 else np.uint8
    return values.reshape(height, width).astype(out_dtype)


def write_pgm(path, values: np.ndarray, maxval: int = MAX_LEVEL) -> None:
    """Write a binary P5 graymap; 16-bit samples are big-endian."""
    grid = np.asarray(values)
    if grid.ndim != 2:
        raise ShapeMismatchError("graymap payload must be 2-D")
    height, width = grid.shape
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    clipped = np.clip(np.rint(grid), 0, maxval).astype(dtype)
    Path(path).write_bytes(header + clipped.tobytes())


def _require(meta: dict, key: str, path) -> object:
    if key not in meta:
        raise MissingMetadataError(f"{path}: sidecar missing {key!r}")
    return meta[key]


def load_frame(raster_path, sidecar_path=None) -> Frame:
    """Load a raster plus its JSON sidecar into a :class:`Frame`.

    The sidecar defaults to ``<raster>.json``.  An optional ``quality_mask``
    entry names an 8-bit graymap (0 = good) relative to the sidecar's
    directory; it must match the raster's shape.
    """
    raster_path = Path(raster_path)
    sidecar_path = Path(sidecar_path) if sidecar_path else Path(str(raster_path) + ".json")
    values = read_pgm(raster_path).astype(np.float64)
    try:
        meta = json.loads(sidecar_path.read_text())
    except FileNotFoundError:
        raise MissingMetadataError(f"sidecar not found: {sidecar_path}") from None
    except json.JSONDecodeError as exc:
        raise MissingMetadataError(f"{sidecar_path}: invalid JSON") from exc
    timestamp = parse_rfc3339(str(_require(meta, "timestamp", sidecar_path)))
    geo = GeoTransform(*(float(_require(meta, k, sidecar_path)) for k in ("lat0", "lon0", "dlat", "dlon")))
    corrupt = None
    if meta.get("quality_mask"):
        mask_grid = read_pgm(sidecar_path.parent / meta["quality_mask"])
        if mask_grid.shape != values.shape:
            raise ShapeMismatchError(
                f"{sidecar_path}: quality mask shape {mask_grid.shape} vs raster {values.shape}"
            )
        corrupt = mask_grid != 0
    return Frame(values=values, timestamp=timestamp, geo=geo, corrupt=corrupt)


def save_frame(frame: Frame, raster_path, sidecar_path=None) -> None:
    """Write a frame as a 16-bit graymap plus sidecar.

    Values are clipped to [0, 65535] and rounded.  A quality mask file is
    emitted only when some pixel is flagged corrupt.
    """
    raster_path = Path(raster_path)
    sidecar_path = Path(sidecar_path) if sidecar_path else Path(str(raster_path) + ".json")
    write_pgm(raster_path, frame.values, MAX_LEVEL)
    meta = {
        "timestamp": format_rfc3339(frame.timestamp),
        "lat0": frame.geo.lat0,
        "lon0": frame.geo.lon0,
        "dlat": frame.geo.dlat,
        "dlon": frame.geo.dlon,
    }
    if frame.corrupt.any():
        mask_name = raster_path.stem + "_mask.pgm"
        write_pgm(raster_path.parent / mask_name, frame.corrupt.astype(np.uint8) * 255, 255)
        meta["quality_mask"] = mask_name
    sidecar_path.write_text(json.dumps(meta, sort_keys=True) + "\n")


def band_difference(a: Frame, b: Frame) -> Frame:
    """Elementwise ``a - b`` for two co-registered, simultaneous frames.

    A pixel is corrupt in the result if it is corrupt in either input.
    """
    if a.values.shape != b.values.shape:
        raise ShapeMismatchError(f"band shapes differ: {a.values.shape} vs {b.values.shape}")
    if a.timestamp != b.timestamp:
        raise RasterError("band timestamps differ")
    if a.geo != b.geo:
        raise RasterError("band geolocations differ")
    return Frame(
        # Promote before subtracting: stored grids may be unsigned.
        values=a.values.astype(np.float64) - b.values.astype(np.float64),
        timestamp=a.timestamp,
        geo=a.geo,
        corrupt=a.corrupt | b.corrupt,
    )


def equalize_histogram(frame: Frame) -> Frame:
    """Global histogram equalization onto [0, 65535].

    The empirical CDF is taken over good pixels only; a pixel with value v
    maps to round(cdf(v) * 65535) (ties to even), so the mapping is monotone
    nondecreasing and a constant frame maps to the top level.  Corrupt pixels
    are forced to 0 and stay flagged.
    """
    good = ~frame.corrupt
    if not good.any():
        raise RasterError("every pixel is corrupt; no histogram to equalize")
    out = np.zeros_like(frame.values)
    sample = frame.values[good]
    levels, counts = np.unique(sample, return_counts=True)
    cdf = np.cumsum(counts) / sample.size
    mapped = np.rint(cdf * MAX_LEVEL)
    out[good] = mapped[np.searchsorted(levels, sample)]
    return Frame(values=out, timestamp=frame.timestamp, geo=frame.geo, corrupt=frame.corrupt.copy())


def corrupt_fraction(frame: Frame) -> float:
    """Fraction of pixels flagged corrupt, in [0, 1]."""
    return float(frame.corrupt.mean())


@dataclass
class SequenceManifest:
    """Ordered raster sequence: (raster, sidecar) path pairs plus cadence.

    ``cadence_s`` is the median spacing of consecutive sidecar timestamps.
    """

    entries: list
    timestamps: list
    cadence_s: float

    def __len__(self) -> int:
        return len(self.entries)


def load_manifest(path) -> SequenceManifest:
    """Read a newline-delimited list of raster paths.

    Relative paths resolve against the manifest's directory; each raster's
    sidecar sits at ``<raster>.json``.  Sidecar timestamps must strictly
    increase along the file.
    """
    path = Path(path)
    try:
        lines = [ln.strip() for ln in path.read_text().splitlines()]
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    for line in lines:
        if not line:
            continue
        raster = Path(line)
        if not raster.is_absolute():
            raster = path.parent / raster
        sidecar = Path(str(raster) + ".json")
        if not raster.exists():
            raise ManifestError(f"manifest entry missing on disk: {raster}")
        if not sidecar.exists():
            raise ManifestError(f"sidecar missing on disk: {sidecar}")
        entries.append((raster, sidecar))
    if not entries:
        raise ManifestError(f"manifest {path} lists no frames")
    timestamps = []
    for _, sidecar in entries:
        meta = json.loads(Path(sidecar).read_text())
        timestamps.append(parse_rfc3339(str(_require(meta, "timestamp", sidecar))))
    for earlier, later in zip(timestamps, timestamps[1:]):
        if later <= earlier:
            raise ManifestError(f"manifest timestamps not strictly increasing at {later}")
    if len(timestamps) > 1:
        cadence = statistics.median(
            (later - earlier).total_seconds() for earlier, later in zip(timestamps, timestamps[1:])
        )
    else:
        cadence = 0.0
    return SequenceManifest(entries=entries, timestamps=timestamps, cadence_s=float(cadence))
