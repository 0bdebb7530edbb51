"""Space-time aggregation of lane changes and hotspot alerts.

Many vehicles leaving the same lane at the same place within a few minutes
suggests something blocks that lane there. Lane-change events are counted
in (kp, time, direction) bins and bins reaching a minimum count are raised
as alerts, with touching kp bins in the same time bin merged.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .lanes import LaneChangeEvent
from .simulator import Lane

log = logging.getLogger(__name__)

NEAR_TO_FAR = "near_to_far"
FAR_TO_NEAR = "far_to_near"
DIRECTIONS = (NEAR_TO_FAR, FAR_TO_NEAR)


class AbnormalityError(ValueError):
    pass


def event_direction(e: LaneChangeEvent) -> str:
    return NEAR_TO_FAR if e.from_lane is Lane.NEAR else FAR_TO_NEAR


@dataclass(frozen=True)
class HistogramConfig:
    """Binning of the monitored range [kp_start, kp_end] x [t_start, t_end]."""

    kp_start: float
    kp_end: float
    t_start: float
    t_end: float
    kp_bin_km: float = 0.1
    time_bin_s: float = 300.0

    def __post_init__(self):
        if not (self.kp_bin_km > 0 and self.time_bin_s > 0):
            raise AbnormalityError("bin widths must be > 0")
        if not (self.kp_end > self.kp_start and self.t_end > self.t_start):
            raise AbnormalityError("monitored range must have positive extent")

    @property
    def n_kp(self) -> int:
        return max(1, int(math.ceil((self.kp_end - self.kp_start) / self.kp_bin_km - 1e-9)))

    @property
    def n_time(self) -> int:
        return max(1, int(math.ceil((self.t_end - self.t_start) / self.time_bin_s - 1e-9)))


def _bin_index(x: float, start: float, width: float, n: int) -> int:
    """Bin of ``x``; a value on a shared boundary goes to the lower bin."""
    pos = (x - start) / width
    idx = int(math.ceil(pos - 1e-9)) - 1
    return min(max(idx, 0), n - 1)


@dataclass
class EventHistogram:
    """Lane-change counts per (kp bin, time bin, direction)."""

    config: HistogramConfig
    counts: np.ndarray = None  # shape (n_kp, n_time, 2)
    tracks: Dict[Tuple[int, int], Set[str]] = field(default_factory=dict)
    skipped: int = 0

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.config.n_kp, self.config.n_time, 2), dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def kp_edges(self, i: int) -> Tuple[float, float]:
        c = self.config
        lo = c.kp_start + i * c.kp_bin_km
        return lo, min(c.kp_end, lo + c.kp_bin_km)

    def time_edges(self, j: int) -> Tuple[float, float]:
        c = self.config
        lo = c.t_start + j * c.time_bin_s
        return lo, min(c.t_end, lo + c.time_bin_s)

    def add(self, e: LaneChangeEvent) -> bool:
        """Count one event; out-of-range events are skipped and tallied."""
        c = self.config
        eps = 1e-9
        if not (c.kp_start - eps <= e.kp <= c.kp_end + eps and c.t_start - eps <= e.time <= c.t_end + eps):
            self.skipped += 1
            return False
        i = _bin_index(e.kp, c.kp_start, c.kp_bin_km, c.n_kp)
        j = _bin_index(e.time, c.t_start, c.time_bin_s, c.n_time)
        self.counts[i, j, DIRECTIONS.index(event_direction(e))] += 1
        if e.track_id:
            self.tracks.setdefault((i, j), set()).add(e.track_id)
        return True


def aggregate(events: Iterable[LaneChangeEvent], hist_cfg: HistogramConfig) -> EventHistogram:
    """Histogram of ``events``; each in-range event lands in exactly one bin."""
    h = EventHistogram(hist_cfg)
    for e in events:
        h.add(e)
    if h.skipped:
        log.warning("%d lane-change events outside the monitored range were skipped", h.skipped)
    return h


@dataclass(frozen=True)
class AbnormalityAlert:
    kp_start: float
    kp_end: float
    t_start: float
    t_end: float
    count: int
    direction: str
    tracks: Tuple[str, ...] = ()

    def contains_kp(self, kp: float) -> bool:
        return self.kp_start - 1e-9 <= kp <= self.kp_end + 1e-9

    def to_record(self) -> dict:
        return {
            "kp_start": self.kp_start,
            "kp_end": self.kp_end,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "count": self.count,
            "direction": self.direction,
            "tracks": list(self.tracks),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "AbnormalityAlert":
        return cls(float(rec["kp_start"]), float(rec["kp_end"]), float(rec["t_start"]), float(rec["t_end"]),
                   int(rec["count"]), str(rec["direction"]), tuple(rec.get("tracks", ())))


def detect_hotspots(
    h: EventHistogram,
    min_count: int = 5,
    adjacent_merge: bool = True,
    require_direction: Optional[str] = None,
) -> List[AbnormalityAlert]:
    """Alerts for bins holding at least ``min_count`` events (both directions).

    With ``adjacent_merge`` hot bins that touch in kp within one time bin
    form a single alert. The dominant direction is the majority over the
    alert's bins; a tie goes to near_to_far. ``require_direction`` keeps
    only alerts whose dominant direction matches.
    """
    if int(min_count) != min_count or min_count < 1:
        raise AbnormalityError("min_count must be a positive integer")
    if require_direction is not None and require_direction not in DIRECTIONS:
        raise AbnormalityError(f"require_direction must be one of {DIRECTIONS}")
    cell_total = h.counts.sum(axis=2)
    alerts = []
    for j in range(h.config.n_time):
        hot = [i for i in range(h.config.n_kp) if cell_total[i, j] >= min_count]
        groups: List[List[int]] = []
        for i in hot:
            if adjacent_merge and groups and groups[-1][-1] == i - 1:
                groups[-1].append(i)
            else:
                groups.append([i])
        for grp in groups:
            by_dir = h.counts[grp, j, :].sum(axis=0)
            direction = NEAR_TO_FAR if by_dir[0] >= by_dir[1] else FAR_TO_NEAR
            if require_direction is not None and direction != require_direction:
                continue
            tracks = sorted(set().union(*(h.tracks.get((i, j), set()) for i in grp)))
            kp0, _ = h.kp_edges(grp[0])
            _, kp1 = h.kp_edges(grp[-1])
            t0, t1 = h.time_edges(j)
            alerts.append(AbnormalityAlert(kp0, kp1, t0, t1, int(by_dir.sum()), direction, tuple(tracks)))
    return alerts


def write_alerts_jsonl(alerts: Iterable[AbnormalityAlert], path) -> None:
    with open(path, "w") as fh:
        for a in alerts:
            fh.write(json.dumps(a.to_record()) + "\n")


def read_alerts_jsonl(path) -> List[AbnormalityAlert]:
    with open(path) as fh:
        return [AbnormalityAlert.from_record(json.loads(line)) for line in fh if line.strip()]


def format_alert_table(alerts: Sequence[AbnormalityAlert]) -> str:
    """Fixed-width summary, one alert per line."""
    header = f"{'kp_start':>9} {'kp_end':>9} {'t_start':>9} {'t_end':>9} {'count':>5}  {'direction':<12} tracks"
    lines = [header]
    for a in alerts:
        lines.append(
            f"{a.kp_start:9.3f} {a.kp_end:9.3f} {a.t_start:9.1f} {a.t_end:9.1f} {a.count:5d}  "
            f"{a.direction:<12} {','.join(a.tracks)}"
        )
    if not alerts:
        lines.append("(no alerts)")
    return "\n".join(lines)
