"""Tracking-box state machine over a raster sequence.

A box of features advances frame to frame by sparse optical flow.  Frames
with too many corrupt pixels are skipped outright; oversized time gaps end
the track.  Across day/night terminator crossings, where radiometry inverts
and flow is meaningless, the box coasts on its recent mean velocity and
re-seeds its features once the crossing completes.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path

import numpy as np

from . import detect, flow, solar
from .detect import DetectorParams, FeaturePoint
from .flow import FlowParams
from .raster import MAX_LEVEL, Frame, SequenceManifest, corrupt_fraction, format_rfc3339, load_frame
from .solar import TRANSITION_STATES, DiurnalState, TransitionParams

# Event kinds, in the order a track can emit them.  FrameSkippedGap is part
# of the event vocabulary for consumers, but oversized gaps terminate the
# track rather than skip the frame, so nothing here emits it.
INITIALIZED = "Initialized"
ADVANCED = "Advanced"
FRAME_SKIPPED_DQF = "FrameSkippedDQF"
FRAME_SKIPPED_GAP = "FrameSkippedGap"
TRANSITION_ENTERED = "TransitionEntered"
COAST_STEP = "CoastStep"
TRANSITION_EXITED = "TransitionExited"
REACQUIRED = "Reacquired"
FEATURE_DROPPED = "FeatureDropped"
TERMINATED = "Terminated"

# Termination / sequence-end reasons.
GAP_TOO_LARGE = "GapTooLarge"
REACQUISITION_FAILED = "ReacquisitionFailed"
FEATURES_LOST = "FeaturesLost"
OVERLAPPING_TRANSITIONS = "OverlappingTransitions"
BOX_LEFT_FRAME = "BoxLeftFrame"
END_OF_DATA = "EndOfData"
VISIBILITY_LOST = "VisibilityLost"


class TrackerError(Exception):
    """Tracking preconditions violated."""


class BoxOutOfBoundsError(TrackerError):
    """The requested box does not fit inside the frame."""


class InsufficientFeaturesError(TrackerError):
    """Seeding found fewer features than the floor."""

    def __init__(self, count: int, needed: int):
        super().__init__(f"found {count} features, need {needed}")
        self.count = count
        self.needed = needed


class TrackerMode(enum.Enum):
    TRACKING = "tracking"
    COASTING = "coasting"
    TERMINATED = "terminated"


@dataclass(frozen=True)
class TrackingBox:
    """Axis-aligned box: subpixel center plus fixed half extents."""

    center_x: float
    center_y: float
    half_width: float
    half_height: float

    def __post_init__(self) -> None:
        if self.half_width < 1 or self.half_height < 1:
            raise ValueError("box half extents must be >= 1 pixel")

    def pixel_bounds(self):
        """Integer (left, top, right, bottom) of the covered pixel rectangle."""
        return (
            int(round(self.center_x - self.half_width)),
            int(round(self.center_y - self.half_height)),
            int(round(self.center_x + self.half_width)),
            int(round(self.center_y + self.half_height)),
        )

    def moved(self, dx: float, dy: float) -> "TrackingBox":
        return replace(self, center_x=self.center_x + dx, center_y=self.center_y + dy)

    def contains_margin(self, width: int, height: int) -> bool:
        return (
            self.center_x - self.half_width >= 0.0
            and self.center_y - self.half_height >= 0.0
            and self.center_x + self.half_width <= width - 1
            and self.center_y + self.half_height <= height - 1
        )


@dataclass
class TrackerConfig:
    detector: DetectorParams = field(default_factory=DetectorParams)
    flow: FlowParams = field(default_factory=FlowParams)
    transition: TransitionParams = field(default_factory=TransitionParams)
    dqf_max: float = 0.02
    gap_max_s: float = 3600.0
    min_features_init: int = 5
    min_features_track: int = 3
    history_len: int = 6


@dataclass(frozen=True)
class TrackerEvent:
    timestamp: datetime
    kind: str
    payload: dict

    def to_json(self) -> str:
        record = {"timestamp": format_rfc3339(self.timestamp), "kind": self.kind, "payload": self.payload}
        return json.dumps(record, sort_keys=True)


@dataclass
class TrackerState:
    box: TrackingBox
    features: list
    mode: TrackerMode
    frame: Frame
    history: list  # (timestamp, center_x, center_y), most recent last
    prev_angles: solar.PerimeterAngles
    last_input_timestamp: datetime
    pyramid: flow.ImagePyramid | None = None
    coast_velocity: tuple | None = None  # px per second
    coast_kind: DiurnalState | None = None
    termination_reason: str | None = None


def detect_in_box(frame: Frame, box: TrackingBox, params: DetectorParams) -> list:
    """Feature detection restricted to the box, in frame coordinates.

    The quality threshold is relative to the strongest response inside the
    box, so absolute scene contrast does not matter.
    """
    left, top, right, bottom = box.pixel_bounds()
    values = frame.values[top : bottom + 1, left : right + 1]
    corrupt = frame.corrupt[top : bottom + 1, left : right + 1]
    found = detect.detect_features(values, params, corrupt)
    return [FeaturePoint(x=f.x + left, y=f.y + top, quality=f.quality) for f in found]


def score_visibility(frame: Frame, box: TrackingBox) -> float:
    """Contrast score: (top-decile mean - median) / (IQR / 1.349).

    Invariant under positive affine rescaling of the pixel values; a box with
    zero interquartile range scores 0.
    """
    left, top, right, bottom = box.pixel_bounds()
    region = frame.values[top : bottom + 1, left : right + 1].ravel()
    q1, q3 = np.percentile(region, [25.0, 75.0])
    iqr = float(q3 - q1)
    if iqr <= 0.0:
        return 0.0
    k = max(1, region.size // 10)
    top_mean = float(np.partition(region, region.size - k)[region.size - k :].mean())
    return (top_mean - float(np.median(region))) / (iqr / 1.349)


def _coast_velocity(history) -> tuple:
    # Mean center displacement per second across the retained history window.
    if len(history) < 2:
        return (0.0, 0.0)
    t0, x0, y0 = history[0]
    t1, x1, y1 = history[-1]
    span = (t1 - t0).total_seconds()
    if span <= 0:
        return (0.0, 0.0)
    return ((x1 - x0) / span, (y1 - y0) / span)


def _check_box(box: TrackingBox, frame: Frame) -> None:
    if not box.contains_margin(frame.width, frame.height):
        raise BoxOutOfBoundsError(
            f"box centered ({box.center_x}, {box.center_y}) exceeds frame {frame.width}x{frame.height}"
        )


def init_tracker(frame: Frame, box: TrackingBox, config: TrackerConfig) -> TrackerState:
    """Seed a track: detect features inside the box on the first frame.

    Raises :class:`BoxOutOfBoundsError` for a box that does not fit and
    :class:`InsufficientFeaturesError` when seeding comes up short.
    """
    _check_box(box, frame)
    features = detect_in_box(frame, box, config.detector)
    if len(features) < config.min_features_init:
        raise InsufficientFeaturesError(len(features), config.min_features_init)
    angles = solar.perimeter_angles(box, frame.geo, frame.timestamp)
    return TrackerState(
        box=box,
        features=features,
        mode=TrackerMode.TRACKING,
        frame=frame,
        history=[(frame.timestamp, box.center_x, box.center_y)],
        prev_angles=angles,
        last_input_timestamp=frame.timestamp,
    )


def _terminate(state: TrackerState, stamp: datetime, reason: str, payload: dict) -> TrackerEvent:
    state.mode = TrackerMode.TERMINATED
    state.termination_reason = reason
    return TrackerEvent(timestamp=stamp, kind=TERMINATED, payload={"reason": reason, **payload})


def _push_history(state: TrackerState, stamp: datetime, config: TrackerConfig) -> None:
    state.history.append((stamp, state.box.center_x, state.box.center_y))
    if len(state.history) > config.history_len:
        del state.history[: len(state.history) - config.history_len]


def advance(state: TrackerState, frame: Frame, config: TrackerConfig):
    """Consume the next frame; returns (state, [events emitted]).

    Order of business: corrupt-frame gate, gap gate, terminator-state update,
    then either a coast step or feature tracking with the box moved by the
    mean surviving displacement.  Skipped frames leave the state untouched
    apart from input-order bookkeeping.
    """
    if state.mode is TrackerMode.TERMINATED:
        raise TrackerError("cannot advance a terminated track")
    if frame.timestamp <= state.last_input_timestamp:
        raise TrackerError("frames must arrive in strictly increasing time order")
    state.last_input_timestamp = frame.timestamp
    stamp = frame.timestamp
    events: list = []

    fraction = corrupt_fraction(frame)
    if fraction > config.dqf_max:
        events.append(TrackerEvent(stamp, FRAME_SKIPPED_DQF, {"corrupt_fraction": round(fraction, 6)}))
        return state, events

    dt = (frame.timestamp - state.frame.timestamp).total_seconds()
    if dt > config.gap_max_s:
        events.append(_terminate(state, stamp, GAP_TOO_LARGE, {"gap_seconds": dt}))
        return state, events

    angles = solar.perimeter_angles(state.box, frame.geo, stamp)
    diurnal = solar.transition_state(angles, config.transition, prev=state.prev_angles)
    state.prev_angles = angles
    in_transition = diurnal in TRANSITION_STATES

    if state.mode is TrackerMode.TRACKING and in_transition:
        state.coast_velocity = _coast_velocity(state.history)
        state.coast_kind = diurnal
        state.mode = TrackerMode.COASTING
        payload = {
            "transition": diurnal.value,
            "velocity_x_px_s": state.coast_velocity[0],
            "velocity_y_px_s": state.coast_velocity[1],
            "history_entries": len(state.history),
        }
        if len(state.history) < config.history_len:
            payload["warning"] = (
                f"coast velocity averaged from only {len(state.history)} history entries"
            )
        events.append(TrackerEvent(stamp, TRANSITION_ENTERED, payload))

    if state.mode is TrackerMode.COASTING:
        if in_transition and diurnal is not state.coast_kind:
            events.append(
                _terminate(
                    state,
                    stamp,
                    OVERLAPPING_TRANSITIONS,
                    {"coasting_through": state.coast_kind.value, "encountered": diurnal.value},
                )
            )
            return state, events
        vx, vy = state.coast_velocity
        moved = state.box.moved(vx * dt, vy * dt)
        if not moved.contains_margin(frame.width, frame.height):
            events.append(_terminate(state, stamp, BOX_LEFT_FRAME, {"center_x": moved.center_x, "center_y": moved.center_y}))
            return state, events
        state.box = moved
        state.frame = frame
        state.pyramid = None  # no flow during coasting; rebuilt on resume
        _push_history(state, stamp, config)
        events.append(TrackerEvent(stamp, COAST_STEP, {"dx": vx * dt, "dy": vy * dt}))
        if not in_transition:
            events.append(TrackerEvent(stamp, TRANSITION_EXITED, {"transition": state.coast_kind.value, "state": diurnal.value}))
            features = detect_in_box(frame, state.box, config.detector)
            if len(features) < config.min_features_init:
                events.append(_terminate(state, stamp, REACQUISITION_FAILED, {"n_features": len(features)}))
                return state, events
            state.features = features
            state.mode = TrackerMode.TRACKING
            state.coast_velocity = None
            state.coast_kind = None
            events.append(TrackerEvent(stamp, REACQUIRED, {"n_features": len(features)}))
        return state, events

    # Plain tracking.  Intensities are scaled to [0, 1] so the flow solver's
    # gradient guard threshold means the same thing for any input.
    if state.pyramid is None:
        state.pyramid = flow.build_pyramid(state.frame.values / MAX_LEVEL, config.flow.pyramid_levels)
    next_pyramid = flow.build_pyramid(frame.values / MAX_LEVEL, config.flow.pyramid_levels)
    landed = []
    displacements = []
    for index, feature in enumerate(state.features):
        outcome = flow.track_feature(state.pyramid, next_pyramid, (feature.x, feature.y), config.flow)
        if outcome.ok:
            landed.append(FeaturePoint(x=feature.x + outcome.flow.dx, y=feature.y + outcome.flow.dy, quality=feature.quality))
            displacements.append((outcome.flow.dx, outcome.flow.dy))
        else:
            events.append(TrackerEvent(stamp, FEATURE_DROPPED, {"index": index, "reason": outcome.reason}))

    if displacements:
        mean_dx = float(np.mean([d[0] for d in displacements]))
        mean_dy = float(np.mean([d[1] for d in displacements]))
    else:
        # Every feature dropped at once.  The recent history velocity is the
        # best remaining motion estimate; holding the box still would fold one
        # full frame of scene motion into the track.
        vx, vy = _coast_velocity(state.history)
        dt = (stamp - state.frame.timestamp).total_seconds()
        mean_dx = vx * dt
        mean_dy = vy * dt
    moved = state.box.moved(mean_dx, mean_dy)
    if not moved.contains_margin(frame.width, frame.height):
        events.append(_terminate(state, stamp, BOX_LEFT_FRAME, {"center_x": moved.center_x, "center_y": moved.center_y}))
        return state, events

    redetected = False
    features = landed
    if len(landed) < config.min_features_track:
        # One in-box re-seeding attempt on the new frame before giving up.
        features = detect_in_box(frame, moved, config.detector)
        redetected = True
        if len(features) < config.min_features_track:
            events.append(
                _terminate(state, stamp, FEATURES_LOST, {"survivors": len(landed), "redetected": len(features)})
            )
            return state, events

    state.box = moved
    state.features = features
    state.frame = frame
    state.pyramid = next_pyramid
    _push_history(state, stamp, config)
    events.append(
        TrackerEvent(
            stamp,
            ADVANCED,
            {
                "dx": mean_dx,
                "dy": mean_dy,
                "n_features": len(features),
                "survivors": len(landed),
                "redetected": redetected,
            },
        )
    )
    return state, events


@dataclass
class BoxPathRow:
    timestamp: datetime
    center_x: float
    center_y: float
    lat: float
    lon: float
    mode: str
    n_features: int
    visibility: float


@dataclass
class PersistenceReport:
    """When the tracked feature stopped being followable, and why."""

    start: datetime
    end: datetime
    duration_hours: float
    end_reason: str

    def to_dict(self) -> dict:
        return {
            "start": format_rfc3339(self.start),
            "end": format_rfc3339(self.end),
            "duration_hours": self.duration_hours,
            "end_reason": self.end_reason,
        }


@dataclass
class SequenceResult:
    report: PersistenceReport
    events: list
    rows: list


def _path_row(frame: Frame, state: TrackerState) -> BoxPathRow:
    lat, lon = frame.geo.pixel_to_geo(state.box.center_x, state.box.center_y)
    return BoxPathRow(
        timestamp=frame.timestamp,
        center_x=state.box.center_x,
        center_y=state.box.center_y,
        lat=float(lat),
        lon=float(lon),
        mode=state.mode.value,
        n_features=len(state.features),
        visibility=score_visibility(frame, state.box),
    )


def run_sequence(
    manifest: SequenceManifest,
    box: TrackingBox,
    config: TrackerConfig,
    visibility_floor: float = 1.0,
    visibility_dwell: int = 12,
) -> SequenceResult:
    """Track a box through a whole manifest and report its persistence.

    The track ends at the first termination, or at the first frame of a run
    of ``visibility_dwell`` consecutive frames scoring below
    ``visibility_floor``, or with the data.  One path row is recorded per
    input frame regardless of skips.
    """
    if visibility_dwell < 1:
        raise TrackerError("visibility_dwell must be >= 1")
    raster0, sidecar0 = manifest.entries[0]
    frame = load_frame(raster0, sidecar0)
    state = init_tracker(frame, box, config)
    start = frame.timestamp
    events = [TrackerEvent(start, INITIALIZED, {"n_features": len(state.features)})]
    rows = [_path_row(frame, state)]

    end_reason = END_OF_DATA
    end = frame.timestamp
    low_count = 0
    low_start = None

    def dwell_tripped(row: BoxPathRow) -> bool:
        nonlocal low_count, low_start
        if row.visibility < visibility_floor:
            low_count += 1
            if low_count == 1:
                low_start = row.timestamp
            return low_count >= visibility_dwell
        low_count = 0
        low_start = None
        return False

    tripped = dwell_tripped(rows[0])
    if tripped:
        end_reason = VISIBILITY_LOST
        end = low_start
    else:
        for raster_path, sidecar_path in manifest.entries[1:]:
            frame = load_frame(raster_path, sidecar_path)
            state, step_events = advance(state, frame, config)
            events.extend(step_events)
            rows.append(_path_row(frame, state))
            if state.mode is TrackerMode.TERMINATED:
                end_reason = state.termination_reason
                end = state.history[-1][0]
                break
            if dwell_tripped(rows[-1]):
                end_reason = VISIBILITY_LOST
                end = low_start
                break
            end = frame.timestamp

    duration_hours = (end - start).total_seconds() / 3600.0
    report = PersistenceReport(start=start, end=end, duration_hours=duration_hours, end_reason=end_reason)
    return SequenceResult(report=report, events=events, rows=rows)


def write_box_path_csv(rows, path) -> None:
    lines = ["timestamp,center_x,center_y,lat,lon,mode,n_features,visibility"]
    for r in rows:
        lines.append(
            f"{format_rfc3339(r.timestamp)},{r.center_x:.4f},{r.center_y:.4f},"
            f"{r.lat:.6f},{r.lon:.6f},{r.mode},{r.n_features},{r.visibility:.4f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_events_ndjson(events, path) -> None:
    Path(path).write_text("".join(e.to_json() + "\n" for e in events))


def read_box_path_csv(path) -> list:
    """Inverse of :func:`write_box_path_csv` (formatting precision and all)."""
    from .raster import parse_rfc3339

    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "timestamp,center_x,center_y,lat,lon,mode,n_features,visibility":
        raise TrackerError(f"{path}: not a box-path CSV")
    rows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        stamp, cx, cy, lat, lon, mode, n_features, visibility = line.split(",")
        rows.append(
            BoxPathRow(
                timestamp=parse_rfc3339(stamp),
                center_x=float(cx),
                center_y=float(cy),
                lat=float(lat),
                lon=float(lon),
                mode=mode,
                n_features=int(n_features),
                visibility=float(visibility),
            )
        )
    if not rows:
        raise TrackerError(f"{path}: box-path CSV has no rows")
    return rows
