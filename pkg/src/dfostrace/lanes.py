"""Lane classification from the spectral centroid of a vehicle's vibration.

Near-lane vehicles vibrate the fiber at higher frequencies than far-lane
ones, so the amplitude-weighted mean frequency of the intensity series taken
along a track separates the two lanes. A threshold calibrated from labeled
samples turns centroids into Near/Far decisions, and flips in that decision
along a track become lane-change events.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .simulator import Lane
from .tracker import VehicleTrack
from .waterfall import Waterfall

log = logging.getLogger(__name__)

MIN_SERIES_LENGTH = 8
DEFAULT_WINDOW_S = 5.0
DEFAULT_HOP_S = 1.0
DEFAULT_DEBOUNCE = 5
DEFAULT_CHANNEL_HALFWIDTH = 4

EVENT_COLUMNS = ["time_s", "kp", "from_lane", "to_lane", "centroid_before_hz", "centroid_after_hz", "track_id"]


class LaneAnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class VibrationSeries:
    """Mean-removed intensity samples along a track, one per time sample."""

    values: np.ndarray
    sample_rate: float
    start_time: float = 0.0

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise LaneAnalysisError(f"sample_rate must be > 0, got {self.sample_rate}")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2.0

    @property
    def duration(self) -> float:
        return len(self.values) / self.sample_rate


@dataclass(frozen=True)
class CentroidThreshold:
    """Near/Far decision boundary in Hz with its training statistics."""

    value: float
    near_sample_count: int = 0
    far_sample_count: int = 0
    misclassification: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.value) and self.value > 0):
            raise LaneAnalysisError(f"threshold must be a positive finite frequency, got {self.value}")
        if not 0.0 <= self.misclassification <= 1.0:
            raise LaneAnalysisError("misclassification rate must lie in [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CentroidThreshold":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise LaneAnalysisError(f"threshold file is not valid JSON: {exc}") from None
        if "value" not in data:
            raise LaneAnalysisError("threshold file has no 'value'")
        return cls(float(data["value"]), int(data.get("near_sample_count", 0)),
                   int(data.get("far_sample_count", 0)), float(data.get("misclassification", 0.0)))


def save_threshold(th: CentroidThreshold, path) -> None:
    Path(path).write_text(th.to_json() + "\n")


def load_threshold(path) -> CentroidThreshold:
    """Read a threshold file: JSON as written by :func:`save_threshold`, or a bare number."""
    text = Path(path).read_text().strip()
    try:
        return CentroidThreshold(float(text))
    except ValueError:
        return CentroidThreshold.from_json(text)


@dataclass(frozen=True)
class LaneChangeEvent:
    time: float
    kp: float
    from_lane: Lane
    to_lane: Lane
    centroid_before: float
    centroid_after: float
    track_id: str = ""

    def __post_init__(self):
        if self.from_lane == self.to_lane:
            raise LaneAnalysisError("a lane change needs two different lanes")

    def to_record(self) -> dict:
        return {
            "time_s": self.time,
            "kp": self.kp,
            "from_lane": self.from_lane.value,
            "to_lane": self.to_lane.value,
            "centroid_before_hz": self.centroid_before,
            "centroid_after_hz": self.centroid_after,
            "track_id": self.track_id,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "LaneChangeEvent":
        return cls(float(rec["time_s"]), float(rec["kp"]), Lane.parse(rec["from_lane"]), Lane.parse(rec["to_lane"]),
                   float(rec["centroid_before_hz"]), float(rec["centroid_after_hz"]), str(rec.get("track_id", "")))


# --------------------------------------------------------------------------- spectra


def extract_vibration_series(w: Waterfall, track: VehicleTrack, t0: float, t1: float,
                             channel_halfwidth: int = 0) -> VibrationSeries:
    """Intensity along the track's fitted path over [t0, t1), mean removed.

    Each time sample reads the waterfall at the nearest channel of the
    fitted path; positions outside the fiber are clipped to its ends. With
    ``channel_halfwidth`` > 0 the sample is the mean over that many channels
    either side, which keeps the vibration (coherent across the vehicle's
    footprint) while averaging down independent noise.
    """
    life0, life1 = track.first_time, track.last_time
    eps = 1e-9
    if not (t0 < t1):
        raise LaneAnalysisError(f"empty interval [{t0}, {t1})")
    if t0 < life0 - eps or t1 > life1 + w.geometry.temporal_resolution + eps:
        raise LaneAnalysisError(
            f"interval [{t0}, {t1}) outside track {track.track_id} lifetime [{life0}, {life1}]"
        )
    r0 = max(0, int(math.ceil((t0 - w.start_time) / w.geometry.temporal_resolution - eps)))
    r1 = min(w.n_times, int(math.ceil((t1 - w.start_time) / w.geometry.temporal_resolution - eps)))
    if r1 <= r0:
        raise LaneAnalysisError(f"interval [{t0}, {t1}) holds no samples")
    rows = np.arange(r0, r1)
    ch = np.rint(track.channel_at_time(w.time_of(rows))).astype(int)
    offsets = np.arange(-channel_halfwidth, channel_halfwidth + 1)
    cols = np.clip(ch[:, None] + offsets[None, :], 0, w.n_channels - 1)
    values = np.asarray(w.samples[rows[:, None], cols], dtype=np.float64).mean(axis=1)
    return VibrationSeries(values - values.mean(), w.geometry.sample_rate, float(w.time_of(r0)))


def spectral_centroid(s: Union[VibrationSeries, Sequence[float]], sample_rate: Optional[float] = None) -> float:
    """Amplitude-weighted mean frequency of the series, in Hz.

    The series is mean-removed and Hann-tapered, and the zero-frequency bin
    is left out of both sums, so a constant series has no defined centroid.

    Raises:
        LaneAnalysisError: fewer than 8 samples or no non-DC energy.
    """
    if not isinstance(s, VibrationSeries):
        if sample_rate is None:
            raise LaneAnalysisError("sample_rate is required for a bare array")
        s = VibrationSeries(np.asarray(s, dtype=np.float64), sample_rate)
    x = s.values
    if len(x) < MIN_SERIES_LENGTH:
        raise LaneAnalysisError(f"series has {len(x)} samples, need at least {MIN_SERIES_LENGTH}")
    if not np.all(np.isfinite(x)):
        raise LaneAnalysisError("series contains non-finite values")
    x = (x - x.mean()) * np.hanning(len(x))
    mag = np.abs(np.fft.rfft(x))[1:]
    freqs = np.fft.rfftfreq(len(x), 1.0 / s.sample_rate)[1:]
    total = mag.sum()
    # rounding leaves ~1e-16 of leakage on a constant series
    if not total > 1e-12 * max(1.0, float(np.abs(s.values).max())) * len(x):
        raise LaneAnalysisError("centroid undefined: series has no energy outside the zero-frequency bin")
    return float(np.sum(freqs * mag) / total)


# --------------------------------------------------------------------------- threshold


def calibrate_threshold(near: Sequence[float], far: Sequence[float],
                        nyquist: Optional[float] = None) -> CentroidThreshold:
    """Threshold minimising training misclassification between labeled centroids.

    Candidates are the midpoints of consecutive values in the
    sorted union that differ by more than round-off. A near sample is correct when its centroid is at or above
    the threshold, a far sample when below. Among equally good candidates
    the one closest to the midpoint of the class means wins (the lower one
    if two are equally close).
    """
    near_a = np.asarray(list(near), dtype=np.float64)
    far_a = np.asarray(list(far), dtype=np.float64)
    if len(near_a) == 0 or len(far_a) == 0:
        raise LaneAnalysisError("both near and far samples are required")
    if not (np.all(np.isfinite(near_a)) and np.all(np.isfinite(far_a))):
        raise LaneAnalysisError("centroid samples must be finite")
    if not near_a.mean() > far_a.mean():
        raise LaneAnalysisError(
            f"inverted classes: mean near {near_a.mean():.3f} Hz <= mean far {far_a.mean():.3f} Hz"
        )
    values = np.unique(np.concatenate([near_a, far_a]))
    # no threshold between values that differ only by round-off
    apart = np.diff(values) > 1e-12 * float(np.abs(values).max())
    candidates = ((values[:-1] + values[1:]) / 2.0)[apart]
    if len(candidates) == 0:
        raise LaneAnalysisError("all centroid samples are equal; no threshold separates them")
    errors = np.array([np.sum(near_a < c) + np.sum(far_a >= c) for c in candidates])
    centre = (near_a.mean() + far_a.mean()) / 2.0
    best = np.nonzero(errors == errors.min())[0]
    dist = np.abs(candidates[best] - centre)
    # equal distances up to round-off count as a tie so the rule survives rescaling
    tied = best[dist <= dist.min() + 1e-9 * float(np.abs(values).max())]
    pick = int(tied[0])
    value = float(candidates[pick])
    if nyquist is not None and not 0 < value < nyquist:
        raise LaneAnalysisError(f"threshold {value} Hz outside (0, {nyquist}) Hz")
    return CentroidThreshold(value, len(near_a), len(far_a), float(errors[pick]) / (len(near_a) + len(far_a)))


def classify_lane(centroid: float, th: Union[CentroidThreshold, float]) -> Lane:
    """Far below the threshold, Near at or above it."""
    value = th.value if isinstance(th, CentroidThreshold) else float(th)
    if not (math.isfinite(centroid) and centroid > 0):
        raise LaneAnalysisError(f"centroid must be finite and positive, got {centroid}")
    return Lane.FAR if centroid < value else Lane.NEAR


# --------------------------------------------------------------------------- lane changes


@dataclass(frozen=True)
class WindowCentroid:
    start: float
    center: float
    centroid: float
    lane: Lane


def centroid_profile(w: Waterfall, track: VehicleTrack, th: Union[CentroidThreshold, float],
                     window: float = DEFAULT_WINDOW_S, hop: float = DEFAULT_HOP_S,
                     channel_halfwidth: int = DEFAULT_CHANNEL_HALFWIDTH,
                     skip: Sequence[Tuple[float, float]] = ()) -> List[WindowCentroid]:
    """Centroid and lane label of every sliding window along the track.

    Windows overlapping any ``skip`` interval (s) are left out.
    """
    if not (window > 0 and hop > 0):
        raise LaneAnalysisError("window and hop must be > 0")
    out = []
    t = track.first_time
    end = track.last_time
    eps = 1e-9
    while t + window <= end + eps:
        if any(a < t + window and b > t for a, b in skip):
            t += hop
            continue
        series = extract_vibration_series(w, track, t, t + window, channel_halfwidth)
        try:
            c = spectral_centroid(series)
        except LaneAnalysisError:
            # a flat stretch (e.g. off the fiber) carries no lane evidence
            c = None
        if c is not None and c > 0:
            out.append(WindowCentroid(t, t + window / 2.0, c, classify_lane(c, th)))
        t += hop
    return out


def detect_lane_changes(
    w: Waterfall,
    track: VehicleTrack,
    th: Union[CentroidThreshold, float],
    hop: float = DEFAULT_HOP_S,
    window: float = DEFAULT_WINDOW_S,
    debounce: int = DEFAULT_DEBOUNCE,
    channel_halfwidth: int = DEFAULT_CHANNEL_HALFWIDTH,
    skip: Sequence[Tuple[float, float]] = (),
) -> List[LaneChangeEvent]:
    """Lane changes along one track from debounced flips of the window labels.

    A flip counts once the new label holds for ``debounce`` consecutive
    windows. The event sits at the first flipped window's centre, mapped
    through the track to a kp. ``centroid_before`` is the median over the
    (up to ``debounce``) windows just before the flip and
    ``centroid_after`` the median over the confirming windows. Windows
    touching a ``skip`` interval (e.g. while another vehicle is alongside)
    are ignored and the current label carries over them.
    """
    if int(debounce) != debounce or debounce < 1:
        raise LaneAnalysisError("debounce must be a positive integer")
    if track.last_time - track.first_time < window:
        log.warning("track %s shorter than the %.1f s analysis window; no lane analysis", track.track_id, window)
        return []
    prof = centroid_profile(w, track, th, window, hop, channel_halfwidth, skip)
    if not prof:
        return []
    events = []
    state = _initial_label(prof, debounce)
    i = 0
    while i < len(prof):
        if prof[i].lane is state:
            i += 1
            continue
        run = prof[i:i + debounce]
        if len(run) == debounce and all(p.lane is prof[i].lane for p in run):
            before = [p.centroid for p in prof[max(0, i - debounce):i] if p.lane is state]
            if not before:
                before = [prof[i - 1].centroid] if i > 0 else [run[0].centroid]
            kp = float(track.kp_at_time(prof[i].center))
            events.append(LaneChangeEvent(prof[i].center, kp, state, prof[i].lane,
                                          float(np.median(before)), float(np.median([p.centroid for p in run])),
                                          track.track_id))
            state = prof[i].lane
            i += debounce
        else:
            i += 1
    return events


def track_centroid(w: Waterfall, track: VehicleTrack, window: float = DEFAULT_WINDOW_S,
                   hop: float = DEFAULT_HOP_S, channel_halfwidth: int = DEFAULT_CHANNEL_HALFWIDTH) -> float:
    """Median window centroid along a track: one labeled sample for calibration."""
    # the threshold only labels windows here; the centroids are what matter
    prof = centroid_profile(w, track, 1.0, window, hop, channel_halfwidth)
    if not prof:
        raise LaneAnalysisError(f"track {track.track_id} too short for a {window} s window")
    return float(np.median([p.centroid for p in prof]))


def _initial_label(prof: List[WindowCentroid], debounce: int) -> Lane:
    """Majority label of the first ``debounce`` windows (Near on a tie)."""
    head = prof[:debounce]
    n_far = sum(p.lane is Lane.FAR for p in head)
    return Lane.FAR if n_far * 2 > len(head) else Lane.NEAR


# --------------------------------------------------------------------------- I/O


def write_events_jsonl(events: Iterable[LaneChangeEvent], path) -> None:
    with open(path, "w") as fh:
        for e in events:
            fh.write(json.dumps(e.to_record()) + "\n")


def read_events_jsonl(path) -> List[LaneChangeEvent]:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(LaneChangeEvent.from_record(json.loads(line)))
            except (ValueError, KeyError) as exc:
                raise LaneAnalysisError(f"{path}:{n}: bad event record ({exc})") from None
    return out


def write_events_csv(events: Iterable[LaneChangeEvent], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=EVENT_COLUMNS)
        wr.writeheader()
        for e in events:
            rec = e.to_record()
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in rec.items()})


def read_events_csv(path) -> List[LaneChangeEvent]:
    with open(path, newline="") as fh:
        return [LaneChangeEvent.from_record(r) for r in csv.DictReader(fh)]
