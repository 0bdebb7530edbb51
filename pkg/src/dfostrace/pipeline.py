"""Multi-vehicle runs: track every seed, then analyse lanes and hotspots."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .abnormality import AbnormalityAlert, HistogramConfig, aggregate, detect_hotspots
from .lanes import (
    DEFAULT_CHANNEL_HALFWIDTH,
    DEFAULT_DEBOUNCE,
    DEFAULT_HOP_S,
    DEFAULT_WINDOW_S,
    CentroidThreshold,
    LaneChangeEvent,
    detect_lane_changes,
)
from .tracker import (
    TrackerConfig,
    TrackingError,
    TrackStatus,
    VehicleTrack,
    smooth_for_tracking,
    track_vehicle,
)
from .waterfall import Waterfall, kp_to_channel_float

log = logging.getLogger(__name__)

Seed = Tuple[str, float, float]  # (track id, time s, kp)


@dataclass(frozen=True)
class LaneParams:
    window_s: float = DEFAULT_WINDOW_S
    hop_s: float = DEFAULT_HOP_S
    debounce: int = DEFAULT_DEBOUNCE
    channel_halfwidth: int = DEFAULT_CHANNEL_HALFWIDTH
    guard_channels: float = 8.0  # skip windows with another track this close; 0 disables


def failed_track(w: Waterfall, seed: Seed, message: str) -> VehicleTrack:
    tid, t, kp = seed
    g = w.geometry
    ch = float(kp_to_channel_float(g, kp))
    track = VehicleTrack(tid, g, w.start_time, (w.row_of(t), ch), status=TrackStatus.FAILED, message=message)
    return track


def track_all(w: Waterfall, seeds: Sequence[Seed], cfg: Optional[TrackerConfig] = None,
              workers: int = 1) -> List[VehicleTrack]:
    """One track per seed, in seed order. A bad seed yields a Failed track."""
    cfg = cfg or TrackerConfig()
    smoothed = smooth_for_tracking(w, cfg) if seeds else w

    def run(seed: Seed) -> VehicleTrack:
        tid, t, kp = seed
        try:
            return track_vehicle(w, (t, kp), cfg, tid, smoothed=smoothed)
        except TrackingError as exc:
            log.warning("track %s failed: %s", tid, exc)
            return failed_track(w, seed, str(exc))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, seeds))
    return [run(s) for s in seeds]


def proximity_intervals(track: VehicleTrack, others: Sequence[VehicleTrack],
                        guard_channels: float) -> List[Tuple[float, float]]:
    """Time intervals where another track's path is within ``guard_channels``."""
    if guard_channels <= 0 or not track.trace:
        return []
    dt = track.geometry.temporal_resolution
    t = np.arange(track.first_time, track.last_time + dt / 2, dt)
    mine = track.channel_at_time(t)
    close = np.zeros(t.shape, dtype=bool)
    for o in others:
        if o is track or o.status is TrackStatus.FAILED or not o.trace:
            continue
        alive = (t >= o.first_time) & (t <= o.last_time)
        if alive.any():
            close[alive] |= np.abs(o.channel_at_time(t[alive]) - mine[alive]) <= guard_channels
    edges = np.flatnonzero(np.diff(np.concatenate(([0], close.astype(np.int8), [0]))))
    return [(float(t[a]), float(t[b - 1]) + dt) for a, b in zip(edges[::2], edges[1::2])]


def detect_all(w: Waterfall, tracks: Sequence[VehicleTrack], th: Union[CentroidThreshold, float],
               params: LaneParams = LaneParams()) -> List[LaneChangeEvent]:
    """Lane changes over all non-failed tracks, sorted by (time, kp, track).

    Windows where another track runs alongside are skipped, since the
    neighbour's vibration leaks into the series.
    """
    events = []
    for tr in tracks:
        if tr.status is TrackStatus.FAILED or not tr.trace:
            continue
        skip = proximity_intervals(tr, tracks, params.guard_channels)
        events += detect_lane_changes(w, tr, th, params.hop_s, params.window_s, params.debounce,
                                      params.channel_halfwidth, skip)
    return sorted(events, key=lambda e: (e.time, e.kp, e.track_id))


def histogram_config_for(w: Waterfall, kp_bin_km: float = 0.1, time_bin_s: float = 300.0) -> HistogramConfig:
    """Bins covering the waterfall's sensed kp range and time span."""
    lo, hi = w.geometry.kp_range
    return HistogramConfig(min(lo, hi), max(lo, hi), w.start_time, w.end_time, kp_bin_km, time_bin_s)


def find_hotspots(w: Waterfall, events: Sequence[LaneChangeEvent], min_count: int = 5,
                  kp_bin_km: float = 0.1, time_bin_s: float = 300.0) -> List[AbnormalityAlert]:
    return detect_hotspots(aggregate(events, histogram_config_for(w, kp_bin_km, time_bin_s)), min_count)
