"""
Iterative single-vehicle tracking on a waterfall.

The loop per update slab (default 1 s of new data, analysed within a trailing
10 s window):

    extract hit points -> keep the hit nearest the running reference per
    time sample -> dynamic space-time gate -> k-means -> least-squares slope
    -> speed and predicted position for the next slab.

A track starts from a camera-surrogate seed (time, kp) and ends when the
prediction leaves the fiber (Completed) or it coasts without hits for longer
than ``max_coast`` (Lost).
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .clustering import Cluster, kmeans_fit, nearest_cluster
from .waterfall import (
    SensorGeometry,
    Waterfall,
    channel_to_kp_unchecked,
    kp_to_channel_float,
)

log = logging.getLogger(__name__)


class TrackingError(ValueError):
    pass


class TrackStatus(str, enum.Enum):
    ACTIVE = "active"
    COASTING = "coasting"
    LOST = "lost"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass(frozen=True)
class HitPoint:
    time_index: int
    channel: int
    intensity: float


@dataclass(frozen=True)
class TrackerConfig:
    """Tracking parameters. Speeds in km/h, times in seconds.

    ``direction`` is the travel direction in channel index (+1 increasing).
    ``peak_radius`` is the half width (channels) of the sub-bands in which
    candidate hits are taken; ``band_margin`` widens the search band
    around the reachable region so the noise floor sees background.
    """

    window_length: float = 10.0
    update_interval: float = 1.0
    v_min: float = 0.0
    v_max: float = 160.0
    gate_tolerance: float = 0.5
    max_coast: float = 5.0
    k_vehicles: int = 1
    noise_floor_mads: float = 4.0
    direction: int = 1
    peak_radius: int = 4
    band_margin: int = 60
    kmeans_seed: int = 0
    min_fit_span: float = 3.0
    smooth_channels: float = 2.0
    smooth_samples: int = 5
    association_radius: float = 5.0
    merge_width_ratio: float = 1.2
    merge_intensity_ratio: float = 1.25
    max_occlusion: float = 60.0
    footprint_span: float = 5.0
    footprint_speed_tolerance: float = 4.0

    def __post_init__(self):
        if not self.window_length > self.update_interval > 0:
            raise TrackingError("need window_length > update_interval > 0")
        if not self.v_max > self.v_min >= 0:
            raise TrackingError("need v_max > v_min >= 0")
        if not self.gate_tolerance >= 0:
            raise TrackingError("gate_tolerance must be >= 0")
        if not self.max_coast >= 0:
            raise TrackingError("max_coast must be >= 0")
        if int(self.k_vehicles) != self.k_vehicles or self.k_vehicles < 1:
            raise TrackingError("k_vehicles must be a positive integer")
        if self.direction not in (1, -1):
            raise TrackingError("direction must be +1 or -1")
        if self.peak_radius < 1:
            raise TrackingError("peak_radius must be >= 1")
        if not (self.merge_width_ratio > 1.0 and self.merge_intensity_ratio > 1.0):
            raise TrackingError("merge_width_ratio and merge_intensity_ratio must be > 1")
        if not self.association_radius > 0:
            raise TrackingError("association_radius must be > 0")
        if not self.max_occlusion >= 0:
            raise TrackingError("max_occlusion must be >= 0")
        if not (self.footprint_span > 0 and self.footprint_speed_tolerance >= 0):
            raise TrackingError("need footprint_span > 0 and footprint_speed_tolerance >= 0")
        if self.smooth_channels < 0 or self.smooth_samples < 1:
            raise TrackingError("smooth_channels must be >= 0 and smooth_samples >= 1")


@dataclass(frozen=True)
class Segment:
    """Least-squares line fitted to one window's cluster, in index space."""

    window_start: int
    window_end: int
    slope: float  # channels per sample
    intercept: float  # channel at time index 0
    speed_kmh: float

    def channel_at(self, time_index) -> float:
        return self.intercept + self.slope * time_index


@dataclass(frozen=True)
class TracePoint:
    time_index: int
    time: float
    channel: float
    kp: float
    speed_kmh: float
    status: TrackStatus


@dataclass
class VehicleTrack:
    track_id: str
    geometry: SensorGeometry
    start_time: float  # scene time of waterfall row 0 the indices refer to
    seed: Tuple[int, float]
    hits: List[HitPoint] = field(default_factory=list)
    segments: List[Segment] = field(default_factory=list)
    speeds: List[float] = field(default_factory=list)
    trace: List[TracePoint] = field(default_factory=list)
    predicted: Tuple[int, float] = (0, 0.0)
    status: TrackStatus = TrackStatus.ACTIVE
    coast_time: float = 0.0
    occluded_time: float = 0.0
    widths: List[float] = field(default_factory=list)
    intensities: List[float] = field(default_factory=list)
    held: List[HitPoint] = field(default_factory=list)
    speed_known: bool = False
    message: str = ""

    @property
    def last_speed(self) -> Optional[float]:
        return self.speeds[-1] if self.speeds else None

    @property
    def last_position(self) -> Tuple[int, float]:
        """Last accepted hit, or the seed before any hit."""
        if self.hits:
            return (self.hits[-1].time_index, float(self.hits[-1].channel))
        return self.seed

    def time_of(self, time_index) -> float:
        return self.start_time + np.asarray(time_index, dtype=float) * self.geometry.temporal_resolution

    @property
    def first_time(self) -> float:
        return float(self.trace[0].time) if self.trace else float(self.time_of(self.seed[0]))

    @property
    def last_time(self) -> float:
        return float(self.trace[-1].time) if self.trace else float(self.time_of(self.seed[0]))

    def path_points(self) -> Tuple[np.ndarray, np.ndarray]:
        """(time s, channel) knots of the fitted path: seed followed by the trace."""
        t = [float(self.time_of(self.seed[0]))] + [p.time for p in self.trace]
        c = [float(self.seed[1])] + [p.channel for p in self.trace]
        return np.asarray(t), np.asarray(c)

    def channel_at_time(self, t) -> np.ndarray:
        """Fitted path channel at scene time(s) ``t`` (linear between knots)."""
        tt, cc = self.path_points()
        return np.interp(np.asarray(t, dtype=float), tt, cc)

    def kp_at_time(self, t) -> np.ndarray:
        return channel_to_kp_unchecked(self.geometry, self.channel_at_time(t))

    def arrival_time(self, kp: float) -> Optional[float]:
        """First time the fitted path reaches ``kp``, linearly interpolated."""
        tt, cc = self.path_points()
        target = float(kp_to_channel_float(self.geometry, kp))
        for i in range(1, len(tt)):
            c0, c1 = cc[i - 1], cc[i]
            if (c0 - target) * (c1 - target) <= 0 and c0 != c1:
                return float(tt[i - 1] + (target - c0) / (c1 - c0) * (tt[i] - tt[i - 1]))
            if c0 == target:
                return float(tt[i - 1])
        if len(cc) and cc[-1] == target:
            return float(tt[-1])
        return None

    @property
    def mean_speed(self) -> float:
        return float(np.mean(self.speeds)) if self.speeds else 0.0


# --------------------------------------------------------------------------- hit points


def _noise_floor(block: np.ndarray, n_mads: float) -> np.ndarray:
    med = np.median(block, axis=1)
    mad = np.median(np.abs(block - med[:, None]), axis=1)
    return med + n_mads * mad


def extract_hit_points(
    w: Waterfall,
    band: Tuple[int, int],
    noise_floor_mads: float = 4.0,
    rows: Optional[Tuple[int, int]] = None,
) -> List[HitPoint]:
    """Per time sample, the strongest channel within ``band`` = [c0, c1).

    A hit is emitted only if it exceeds the row's robust noise floor
    (median + ``noise_floor_mads`` * MAD over the band). Equal maxima resolve
    to the lower channel. ``rows`` restricts the time samples considered.
    """
    c0, c1 = band
    if not 0 <= c0 < c1 <= w.n_channels:
        raise TrackingError(f"band [{c0}, {c1}) empty or outside [0, {w.n_channels})")
    r0, r1 = rows if rows is not None else (0, w.n_times)
    block = np.asarray(w.samples[r0:r1, c0:c1], dtype=np.float64)
    if block.size == 0:
        return []
    floor = _noise_floor(block, noise_floor_mads)
    arg = np.argmax(block, axis=1)
    peak = block[np.arange(len(block)), arg]
    return [
        HitPoint(r0 + i, c0 + int(arg[i]), float(peak[i]))
        for i in np.nonzero(peak > floor)[0]
    ]


def extract_candidate_hits(
    w: Waterfall,
    band: Tuple[int, int],
    rows: Tuple[int, int],
    radius: int,
    noise_floor_mads: float = 4.0,
) -> List[HitPoint]:
    """Hit points over sliding sub-bands of half width ``radius``.

    A channel is a candidate when it is the hit point of the sub-band
    [c - radius, c + radius] centred on it (strict over lower neighbours,
    so plateaus resolve to their lowest channel) and exceeds the noise floor
    of the whole band. This lets several vehicles in one band each leave a
    hit in the same time sample.
    """
    c0, c1 = band
    if not 0 <= c0 < c1 <= w.n_channels:
        raise TrackingError(f"band [{c0}, {c1}) empty or outside [0, {w.n_channels})")
    r0, r1 = rows
    block = np.asarray(w.samples[r0:r1, c0:c1], dtype=np.float64)
    if block.size == 0:
        return []
    floor = _noise_floor(block, noise_floor_mads)
    n_r, n_c = block.shape
    padded = np.full((n_r, n_c + 2 * radius), -np.inf)
    padded[:, radius:radius + n_c] = block
    windows = np.lib.stride_tricks.sliding_window_view(padded, 2 * radius + 1, axis=1)
    left = windows[:, :, :radius].max(axis=2)
    right = windows[:, :, radius + 1:].max(axis=2)
    is_peak = (block > left) & (block >= right) & (block > floor[:, None])
    rr, cc = np.nonzero(is_peak)
    return [HitPoint(r0 + int(r), c0 + int(c), float(block[r, c])) for r, c in zip(rr, cc)]


def peak_width(w: Waterfall, hit: HitPoint, max_half_width: int = 40) -> int:
    """Channels around ``hit`` on its own peak at or above half its intensity.

    The run stops at half maximum or where the profile starts rising again,
    so a separate neighbouring peak does not count toward the width.
    """
    row = np.asarray(w.samples[hit.time_index], dtype=np.float64)
    half = 0.5 * hit.intensity
    c = hit.channel

    def run(side: np.ndarray) -> int:
        # side starts at the hit itself and walks outward
        stop = (side[1:] < half) | (side[1:] > side[:-1])
        return int(np.argmax(stop)) if stop.any() else len(side) - 1

    lo = max(0, c - max_half_width)
    hi = min(len(row), c + max_half_width + 1)
    return 1 + run(row[lo:c + 1][::-1]) + run(row[c:hi])


def smooth_for_tracking(w: Waterfall, cfg: TrackerConfig) -> Waterfall:
    """Copy of ``w`` smoothed across channels and time to stabilise peak picking."""
    data = np.asarray(w.samples, dtype=np.float64)
    if cfg.smooth_channels > 0:
        data = ndimage.gaussian_filter1d(data, cfg.smooth_channels, axis=1, mode="nearest", truncate=3.0)
    if cfg.smooth_samples > 1:
        data = ndimage.uniform_filter1d(data, cfg.smooth_samples, axis=0, mode="nearest")
    # the running-sum filter leaves round-off residue where the input was zero
    if data.size:
        data[data < 1e-9 * float(data.max())] = 0.0
    return Waterfall(w.geometry, w.start_time, np.maximum(data, 0.0))


# --------------------------------------------------------------------------- denoising


def select_nearest(
    hits: Sequence[HitPoint],
    reference: Tuple[float, float],
    velocity: float = 0.0,
    advance: bool = True,
) -> List[HitPoint]:
    """Keep one hit per time sample: the one nearest the running reference.

    The reference starts at ``reference`` = (time index, channel) and moves
    to each selected hit. Distances are measured in (scaled time, channel)
    space with time scaled by ``velocity`` (channels per sample), so the
    comparison is against where the reference would have moved to at that
    time. With ``advance=False`` the reference stays put, i.e. every hit is
    compared against the straight-line prediction from ``reference``. Ties
    go to the lower channel.
    """
    by_time = {}
    for h in hits:
        by_time.setdefault(h.time_index, []).append(h)
    ref_t, ref_c = float(reference[0]), float(reference[1])
    out = []
    for t in sorted(by_time):
        expected = ref_c + velocity * (t - ref_t)
        best = min(by_time[t], key=lambda h: (abs(h.channel - expected), h.channel))
        out.append(best)
        if advance:
            ref_t, ref_c = float(best.time_index), float(best.channel)
    return out


def gate_bounds(
    prev_speed: Optional[float],
    dt_s: float,
    cfg: TrackerConfig,
    geometry: SensorGeometry,
) -> Tuple[int, int]:
    """Allowed channel displacement [lo, hi] over an elapsed gap of ``dt_s``.

    The tolerance band around the previous speed is rounded outward to whole
    channels, then clipped inward to the physical limits v_min / v_max so
    no accepted displacement implies an impossible speed.
    """
    dx = geometry.spatial_resolution
    phys_lo = cfg.v_min / 3.6 * dt_s
    phys_hi = cfg.v_max / 3.6 * dt_s
    if prev_speed is None:
        lo_m, hi_m = phys_lo, phys_hi
    else:
        lo_m = max(cfg.v_min, (1 - cfg.gate_tolerance) * prev_speed) / 3.6 * dt_s
        hi_m = min(cfg.v_max, (1 + cfg.gate_tolerance) * prev_speed) / 3.6 * dt_s
    eps = 1e-9
    lo = max(math.floor(lo_m / dx + eps), math.ceil(phys_lo / dx - eps))
    hi = min(math.ceil(hi_m / dx - eps), math.floor(phys_hi / dx + eps))
    return lo, hi


def gate_hit_points(
    hits: Sequence[HitPoint],
    last: Tuple[int, float],
    prev_speed: Optional[float],
    cfg: TrackerConfig,
    geometry: SensorGeometry,
) -> List[HitPoint]:
    """Dynamic space-time gate.

    Walks the hits in time order and keeps a hit when its displacement from
    the last accepted position, taken in the travel direction, lies inside
    :func:`gate_bounds` for the elapsed gap. Accepted hits become the new
    last position. ``prev_speed`` None means the speed is not known yet.
    """
    last_t, last_c = last
    kept = []
    for h in sorted(hits, key=lambda h: (h.time_index, h.channel)):
        if h.time_index <= last_t:
            continue
        dt_s = (h.time_index - last_t) * geometry.temporal_resolution
        lo, hi = gate_bounds(prev_speed, dt_s, cfg, geometry)
        disp = cfg.direction * (h.channel - last_c)
        if lo - 1e-9 <= disp <= hi + 1e-9:
            kept.append(h)
            last_t, last_c = h.time_index, float(h.channel)
    return kept


# --------------------------------------------------------------------------- speed


def fit_line(points: np.ndarray) -> Tuple[float, float]:
    """Least-squares slope and intercept of y on x for (x, y) rows."""
    pts = np.asarray(points, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    if len(np.unique(x)) < 2:
        raise TrackingError("degenerate fit: all points share one time index")
    xm, ym = x.mean(), y.mean()
    slope = float(np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2))
    return slope, float(ym - slope * xm)


def estimate_speed(c: Cluster, geometry: SensorGeometry) -> Tuple[float, int]:
    """Speed (km/h) and travel direction (sign of slope) of a (time, channel) cluster."""
    slope, _ = fit_line(c.points)
    direction = int(np.sign(slope))
    return geometry.speed_from_slope(slope), direction


# --------------------------------------------------------------------------- tracking loop


def seed_track(w: Waterfall, start: Tuple[float, float], track_id: str = "0") -> VehicleTrack:
    """New track at camera-surrogate ``start`` = (time s, kp)."""
    t, kp = start
    g = w.geometry
    row = w.row_of(t)
    ch = float(kp_to_channel_float(g, kp))
    if not (0 <= row < w.n_times):
        raise TrackingError(f"start time {t} outside waterfall [{w.start_time}, {w.end_time})")
    if not (-0.5 <= ch <= g.channel_count - 0.5):
        raise TrackingError(f"start kp {kp} outside the sensed range {g.kp_range}")
    ch = float(min(max(round(ch), 0), g.channel_count - 1))
    return VehicleTrack(track_id, g, w.start_time, (row, ch), predicted=(row, ch))


def _steps(cfg: TrackerConfig, geometry: SensorGeometry) -> Tuple[int, int]:
    dt = geometry.temporal_resolution
    return max(1, int(round(cfg.update_interval / dt))), max(1, int(round(cfg.window_length / dt)))


def _search_band(track: VehicleTrack, r1: int, cfg: TrackerConfig, g: SensorGeometry) -> Tuple[int, int]:
    last_t, last_c = track.last_position
    reach = g.channels_per_sample(cfg.v_max) * (r1 - last_t)
    lo = last_c - cfg.band_margin
    hi = last_c + reach + cfg.band_margin
    if cfg.direction < 0:
        lo, hi = last_c - reach - cfg.band_margin, last_c + cfg.band_margin
    # keep the width at the fiber ends so the noise floor still sees background
    width = math.ceil(hi) + 1 - math.floor(lo)
    c0 = int(max(0, math.floor(lo)))
    c1 = int(min(g.channel_count, c0 + width))
    c0 = int(max(0, c1 - width))
    return c0, c1


def track_step(track: VehicleTrack, window: Waterfall, cfg: TrackerConfig) -> VehicleTrack:
    """Advance ``track`` by one update slab.

    ``window`` is the full waterfall the track was seeded on (index frame is
    shared); the slab is ``update_interval`` of data starting at the
    predicted time index, analysed with the trailing ``window_length``.
    """
    if track.status not in (TrackStatus.ACTIVE, TrackStatus.COASTING):
        raise TrackingError(f"track {track.track_id} is {track.status.value}, cannot step")
    g = window.geometry
    pred_t, pred_c = track.predicted
    if not (0 <= pred_t < window.n_times):
        raise TrackingError(
            f"window rows [0, {window.n_times}) do not cover predicted time index {pred_t}"
        )
    update_n, window_n = _steps(cfg, g)
    r0 = pred_t
    r1 = min(window.n_times, r0 + update_n)
    dt = g.temporal_resolution

    prev_speed = track.last_speed if track.speed_known else None
    velocity = cfg.direction * g.channels_per_sample(prev_speed) if prev_speed is not None else 0.0

    last_t, last_c = track.last_position
    first_row = max(r0, last_t + 1)
    accepted: List[HitPoint] = []
    if first_row < r1:
        band = _search_band(track, r1, cfg, g)
        cands = extract_candidate_hits(window, band, (first_row, r1), cfg.peak_radius, cfg.noise_floor_mads)
        if track.speed_known and track.segments:
            # an established fit predicts better than the last hit, which can
            # sit on a neighbouring vehicle while two ridges overlap
            seg = track.segments[-1]
            ref = (float(last_t), seg.channel_at(last_t))
            cands = [h for h in cands
                     if abs(h.channel - seg.channel_at(h.time_index)) <= cfg.association_radius]
            nearest = select_nearest(cands, ref, seg.slope, advance=False)
        else:
            nearest = select_nearest(cands, (last_t, last_c), velocity)
        accepted = gate_hit_points(nearest, (last_t, last_c), prev_speed, cfg, g)

    # a hit much wider or brighter than this vehicle's usual footprint is two
    # ridges merged; its peak is pulled toward the other vehicle, so it is
    # kept out of the fit and the track rides its established line instead.
    # A footprint that stays changed past max_occlusion becomes the new norm,
    # and so does one that is brighter but no wider and keeps moving at the
    # track's own speed: that is this vehicle changing lane, not a neighbour.
    widths = [peak_width(window, h, cfg.band_margin) for h in accepted]
    levels = [h.intensity for h in accepted]
    ref_widths, ref_levels = track.widths, track.intensities
    merged_any = False
    held: List[HitPoint] = []
    recovered: List[HitPoint] = []
    if track.occluded_time + (r1 - r0) * dt > cfg.max_occlusion + 1e-9:
        ref_widths, ref_levels = [], []
    elif accepted and track.speed_known and track.segments and ref_widths:
        ref_w = float(np.median(ref_widths))
        ref_i = float(np.median(ref_levels))
        keep = [wd <= cfg.merge_width_ratio * ref_w and lv <= cfg.merge_intensity_ratio * ref_i
                for wd, lv in zip(widths, levels)]
        narrow = [wd <= cfg.merge_width_ratio * ref_w for wd in widths]
        held = [h for h in track.held if h.time_index >= r1 - window_n] + \
            [h for h, k, n in zip(accepted, keep, narrow) if n and not k]
        if _moves_with_track(held, track.last_speed, cfg, g):
            log.debug("track %s: footprint changed at row %d, reference reset", track.track_id, r1)
            ref_widths, ref_levels = [], []
            recovered = [h for h in track.held if h.time_index > last_t]
            held = []
        else:
            merged_any = not all(keep)
            accepted = [h for h, k in zip(accepted, keep) if k]
            widths = [wd for wd, k in zip(widths, keep) if k]
            levels = [lv for lv, k in zip(levels, keep) if k]

    hits = track.hits + accepted
    if recovered:
        hits = sorted(track.hits + recovered + accepted, key=lambda h: h.time_index)
    new = replace(track, hits=hits, segments=list(track.segments),
                  speeds=list(track.speeds), trace=list(track.trace), held=held,
                  widths=(ref_widths + widths)[-200:], intensities=(ref_levels + levels)[-200:])
    t_end = r1 - 1

    if accepted:
        new.status = TrackStatus.ACTIVE
        new.coast_time = 0.0
        new.occluded_time = 0.0
        lo_row = r1 - window_n
        pts = np.array([(h.time_index, h.channel) for h in new.hits if h.time_index >= lo_row], dtype=float)
        segment = _fit_window(pts, new, lo_row, r1, velocity, cfg, g)
        provisional = False
        if segment is not None:
            provisional = _span_s(pts, dt) < cfg.min_fit_span
            if not provisional:
                new.segments.append(segment)
                new.speeds.append(segment.speed_kmh)
                new.speed_known = True
            pos = segment.channel_at(t_end)
            # the fit may lag the newest hit; never place the track behind it
            newest = float(new.hits[-1].channel)
            if cfg.direction * (pos - newest) < -1.0:
                pos = newest - cfg.direction * 1.0
        else:
            pos = float(new.hits[-1].channel)
        if segment is not None and provisional:
            speed = segment.speed_kmh
        else:
            speed = new.last_speed if new.last_speed is not None else 0.0
    elif (merged_any or _signal_at_prediction(window, track, r0, r1, cfg)) and track.occluded_time + (r1 - r0) * dt <= cfg.max_occlusion + 1e-9:
        new.status = TrackStatus.ACTIVE
        new.coast_time = 0.0
        new.occluded_time = track.occluded_time + (r1 - r0) * dt
        speed = track.last_speed
        pos = pred_c + cfg.direction * g.channels_per_sample(speed) * (t_end - pred_t)
    else:
        new.status = TrackStatus.COASTING
        new.coast_time = track.coast_time + (r1 - r0) * dt
        speed = track.last_speed if track.last_speed is not None else 0.0
        pos = pred_c + cfg.direction * g.channels_per_sample(speed) * (t_end - pred_t)

    kp = float(channel_to_kp_unchecked(g, pos))
    new.trace.append(TracePoint(t_end, float(track.time_of(t_end)), float(pos), kp, float(speed), new.status))
    next_c = pos + cfg.direction * g.channels_per_sample(speed) * (r1 - t_end)
    new.predicted = (r1, float(next_c))

    if new.status is TrackStatus.COASTING and new.coast_time > cfg.max_coast + 1e-9:
        new.status = TrackStatus.LOST
        new.message = f"no hits for {new.coast_time:.1f} s"
    elif not (-0.5 <= next_c <= g.channel_count - 0.5):
        new.status = TrackStatus.COMPLETED
    elif r1 >= window.n_times:
        new.message = "end of data"
    return new


def _moves_with_track(held: List[HitPoint], speed: Optional[float], cfg: TrackerConfig,
                      g: SensorGeometry) -> bool:
    """True when held-back hits span ``footprint_span`` and fit the track's speed."""
    if speed is None or len(held) < 2:
        return False
    pts = np.array([(h.time_index, h.channel) for h in held], dtype=float)
    if _span_s(pts, g.temporal_resolution) < cfg.footprint_span:
        return False
    slope, _ = fit_line(pts)
    if cfg.direction * slope <= 0:
        return False
    return abs(g.speed_from_slope(slope) - speed) <= cfg.footprint_speed_tolerance


def _signal_at_prediction(w: Waterfall, track: VehicleTrack, r0: int, r1: int, cfg: TrackerConfig) -> bool:
    """True when most slab rows show signal above the noise floor where the track should be.

    With no clean hit this means the vehicle is hidden under a neighbour
    rather than gone.
    """
    if not (track.speed_known and track.widths):
        return False
    g = w.geometry
    pred_t, pred_c = track.predicted
    speed = track.last_speed or 0.0
    rows = np.arange(r0, r1)
    ch = np.rint(pred_c + cfg.direction * g.channels_per_sample(speed) * (rows - pred_t)).astype(int)
    inside = (ch >= 0) & (ch < g.channel_count)
    if not inside.any():
        return False
    rows, ch = rows[inside], ch[inside]
    c0, c1 = _search_band(track, r1, cfg, g)
    floor = _noise_floor(np.asarray(w.samples[r0:r1, c0:c1], dtype=np.float64), cfg.noise_floor_mads)
    values = np.asarray(w.samples[rows, ch], dtype=np.float64)
    return bool(np.mean(values > floor[rows - r0]) >= 0.5)


def _span_s(pts: np.ndarray, dt: float) -> float:
    return float(pts[:, 0].max() - pts[:, 0].min()) * dt if len(pts) else 0.0


def _fit_window(pts, track, lo_row, r1, velocity, cfg, g) -> Optional[Segment]:
    if len(pts) < 2 or len(np.unique(pts[:, 0])) < 2:
        return None
    # time scaled so one sample corresponds to the expected channel advance
    scale = abs(velocity) if velocity else 1.0
    scaled = np.column_stack([pts[:, 0] * scale, pts[:, 1]])
    k = min(cfg.k_vehicles, len(np.unique(scaled, axis=0)))
    clusters = kmeans_fit(scaled, k, seed=cfg.kmeans_seed)
    pred_t, pred_c = track.predicted
    chosen = nearest_cluster(clusters, (pred_t * scale, pred_c))
    members = pts[chosen.members]
    if len(np.unique(members[:, 0])) < 2:
        return None
    slope, intercept = fit_line(members)
    speed = float(np.clip(g.speed_from_slope(slope), cfg.v_min, cfg.v_max))
    if cfg.direction * slope < 0:
        speed = cfg.v_min
    return Segment(int(lo_row), int(r1), slope, intercept, speed)


def track_vehicle(
    w: Waterfall,
    start: Tuple[float, float],
    cfg: Optional[TrackerConfig] = None,
    track_id: str = "0",
    smoothed: Optional[Waterfall] = None,
) -> VehicleTrack:
    """Track one vehicle from ``start`` = (time s, kp) until Completed or Lost.

    Hit points are taken from a smoothed copy of ``w`` (pass ``smoothed`` to
    reuse one across tracks). If the data ends first the track keeps its
    last status.
    """
    cfg = cfg or TrackerConfig()
    track = seed_track(w, start, track_id)
    if smoothed is None:
        smoothed = smooth_for_tracking(w, cfg)
    while track.status in (TrackStatus.ACTIVE, TrackStatus.COASTING):
        if track.predicted[0] >= w.n_times:
            break
        track = track_step(track, smoothed, cfg)
    return track


# --------------------------------------------------------------------------- I/O

TRACK_COLUMNS = ["time_s", "kp", "channel", "speed_kmh", "status"]
SUMMARY_COLUMNS = [
    "track_id", "start_time_s", "start_kp", "end_time_s", "end_kp", "mean_speed_kmh", "status", "message",
]


def write_track_csv(track: VehicleTrack, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(TRACK_COLUMNS)
        for p in track.trace:
            wr.writerow([repr(p.time), repr(p.kp), repr(p.channel), repr(p.speed_kmh), p.status.value])


def summary_row(track: VehicleTrack) -> dict:
    t0 = float(track.time_of(track.seed[0]))
    kp0 = float(channel_to_kp_unchecked(track.geometry, track.seed[1]))
    last = track.trace[-1] if track.trace else None
    return {
        "track_id": track.track_id,
        "start_time_s": repr(t0),
        "start_kp": repr(kp0),
        "end_time_s": repr(last.time) if last else "",
        "end_kp": repr(last.kp) if last else "",
        "mean_speed_kmh": f"{track.mean_speed:.3f}",
        "status": track.status.value,
        "message": track.message,
    }


def write_summary_csv(rows: Iterable[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        wr.writeheader()
        for r in rows:
            wr.writerow(r)


def read_summary_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_track_csv(path, geometry: SensorGeometry, start_time: float, track_id: str,
                   seed: Optional[Tuple[float, float]] = None, status: Optional[str] = None) -> VehicleTrack:
    """Rebuild a track's fitted path from its per-window CSV.

    ``seed`` = (time s, kp) restores the path knot before the first window;
    without it the first trace point acts as the seed.
    """
    trace = []
    dt = geometry.temporal_resolution
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            t = float(row["time_s"])
            trace.append(TracePoint(
                int(round((t - start_time) / dt)), t, float(row["channel"]), float(row["kp"]),
                float(row["speed_kmh"]), TrackStatus(row["status"]),
            ))
    if seed is not None:
        seed_idx = (int(round((seed[0] - start_time) / dt)), float(kp_to_channel_float(geometry, seed[1])))
    elif trace:
        seed_idx = (trace[0].time_index, trace[0].channel)
    else:
        seed_idx = (0, 0.0)
    track = VehicleTrack(track_id, geometry, start_time, seed_idx, trace=trace,
                         speeds=[p.speed_kmh for p in trace if p.status is TrackStatus.ACTIVE])
    if status:
        track.status = TrackStatus(status)
    elif trace:
        track.status = trace[-1].status
    return track
