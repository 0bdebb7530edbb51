"""Scoring of tracks and lane-change events against simulator ground truth.

Tracking counts a vehicle as detected when its track reaches the vehicle's
destination checkpoint within ``tol`` seconds of the true arrival. Lane
changes are matched greedily in time order, one-to-one, within a time and
kp window and only between events of the same direction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .abnormality import DIRECTIONS, FAR_TO_NEAR, NEAR_TO_FAR
from .lanes import LaneChangeEvent
from .simulator import CheckpointRecord, Lane, LaneChange, VehicleClass
from .tracker import VehicleTrack

POOLED = "pooled"
OVERALL = "overall"


class EvaluationError(ValueError):
    pass


def _rate(num: int, den: int) -> Optional[float]:
    return num / den if den > 0 else None


@dataclass(frozen=True)
class TrackingScore:
    detected: int
    total: int

    def __post_init__(self):
        if not 0 <= self.detected <= self.total:
            raise EvaluationError("need 0 <= detected <= total")

    @property
    def accuracy(self) -> Optional[float]:
        return _rate(self.detected, self.total)


@dataclass(frozen=True)
class LaneChangeScore:
    true_count: int
    detected_count: int
    matched: int

    @property
    def tpr(self) -> Optional[float]:
        return _rate(self.matched, self.true_count)

    @property
    def fpr(self) -> Optional[float]:
        return _rate(self.detected_count - self.matched, self.detected_count)


@dataclass
class MetricsReport:
    """Tracking scores keyed by vehicle class plus ``overall``; lane-change
    scores keyed by direction plus ``pooled``. Undefined rates are None."""

    tracking: Dict[str, TrackingScore] = field(default_factory=dict)
    lane_change: Dict[str, LaneChangeScore] = field(default_factory=dict)
    misses: List[str] = field(default_factory=list)

    def merge(self, other: "MetricsReport") -> "MetricsReport":
        return MetricsReport({**self.tracking, **other.tracking}, {**self.lane_change, **other.lane_change},
                             self.misses + other.misses)

    def to_dict(self) -> dict:
        return {
            "tracking": {k: {"detected": s.detected, "total": s.total, "accuracy": s.accuracy}
                         for k, s in self.tracking.items()},
            "lane_change": {k: {"true": s.true_count, "detected": s.detected_count, "matched": s.matched,
                                "tpr": s.tpr, "fpr": s.fpr}
                            for k, s in self.lane_change.items()},
            "missed_vehicles": list(self.misses),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            {k: TrackingScore(v["detected"], v["total"]) for k, v in d.get("tracking", {}).items()},
            {k: LaneChangeScore(v["true"], v["detected"], v["matched"]) for k, v in d.get("lane_change", {}).items()},
            list(d.get("missed_vehicles", [])),
        )

    def format_table(self) -> str:
        fmt = lambda r: "N/A" if r is None else f"{100 * r:.1f}%"
        lines = []
        if self.tracking:
            lines.append(f"{'vehicles':<10} {'detected':>8} {'total':>6} {'accuracy':>9}")
            for k, s in self.tracking.items():
                lines.append(f"{k:<10} {s.detected:>8d} {s.total:>6d} {fmt(s.accuracy):>9}")
        if self.lane_change:
            if lines:
                lines.append("")
            lines.append(f"{'direction':<12} {'true':>5} {'detected':>8} {'matched':>7} {'TPR':>7} {'FPR':>7}")
            for k, s in self.lane_change.items():
                lines.append(f"{k:<12} {s.true_count:>5d} {s.detected_count:>8d} {s.matched:>7d} "
                             f"{fmt(s.tpr):>7} {fmt(s.fpr):>7}")
        return "\n".join(lines)


def destination_checkpoints(truth: Iterable[CheckpointRecord]) -> Dict[str, CheckpointRecord]:
    """Each vehicle's last checkpoint passed (by true time)."""
    dest: Dict[str, CheckpointRecord] = {}
    for c in truth:
        if c.vehicle_id not in dest or c.time > dest[c.vehicle_id].time:
            dest[c.vehicle_id] = c
    return dest


def tracking_accuracy(tracks: Sequence[VehicleTrack], truth: Sequence[CheckpointRecord],
                      tol: float = 3.0) -> MetricsReport:
    """Checkpoint-arrival matching, overall and per vehicle class.

    Tracks are paired with vehicles by ``track_id == vehicle_id``.
    """
    if not tol > 0:
        raise EvaluationError("tol must be > 0")
    dest = destination_checkpoints(truth)
    if not dest:
        raise EvaluationError("no checkpoints configured")
    by_id = {t.track_id: t for t in tracks}
    counts = {cls.value: [0, 0] for cls in VehicleClass}
    misses = []
    for vid in sorted(dest):
        ck = dest[vid]
        track = by_id.get(vid)
        arrival = track.arrival_time(ck.kp) if track is not None else None
        hit = arrival is not None and abs(arrival - ck.time) <= tol
        counts[ck.vehicle_class.value][1] += 1
        counts[ck.vehicle_class.value][0] += int(hit)
        if not hit:
            misses.append(vid)
    scores = {k: TrackingScore(d, n) for k, (d, n) in counts.items() if n > 0}
    scores[OVERALL] = TrackingScore(sum(d for d, _ in counts.values()), sum(n for _, n in counts.values()))
    return MetricsReport(tracking=scores, misses=misses)


def _direction(from_lane: Lane) -> str:
    return NEAR_TO_FAR if from_lane is Lane.NEAR else FAR_TO_NEAR


def match_lane_changes(
    detected: Sequence[LaneChangeEvent],
    truth: Sequence[LaneChange],
    match_window: float = 10.0,
    match_kp: float = 0.2,
) -> List[Tuple[int, int]]:
    """Greedy one-to-one matching; returns (detected index, truth index) pairs.

    Detections are visited in time order and each takes the nearest-in-time
    unmatched true event of the same direction inside both windows.
    """
    if not (match_window > 0 and match_kp > 0):
        raise EvaluationError("match_window and match_kp must be > 0")
    d_order = sorted(range(len(detected)),
                     key=lambda i: (detected[i].time, detected[i].kp, detected[i].track_id, detected[i].from_lane.value))
    t_order = sorted(range(len(truth)), key=lambda j: (truth[j].time, truth[j].kp, truth[j].vehicle_id))
    used = set()
    pairs = []
    for i in d_order:
        e = detected[i]
        best = None
        for j in t_order:
            if j in used:
                continue
            g = truth[j]
            if _direction(g.from_lane) != _direction(e.from_lane):
                continue
            dt = abs(g.time - e.time)
            if dt <= match_window and abs(g.kp - e.kp) <= match_kp and (best is None or dt < best[0]):
                best = (dt, j)
        if best is not None:
            used.add(best[1])
            pairs.append((i, best[1]))
    return pairs


def lane_change_metrics(
    detected: Sequence[LaneChangeEvent],
    truth: Sequence[LaneChange],
    match_window: float = 10.0,
    match_kp: float = 0.2,
) -> MetricsReport:
    """TPR and FPR per direction and pooled over both."""
    pairs = match_lane_changes(detected, truth, match_window, match_kp)
    scores = {}
    for d in DIRECTIONS:
        n_true = sum(_direction(g.from_lane) == d for g in truth)
        n_det = sum(_direction(e.from_lane) == d for e in detected)
        n_match = sum(_direction(detected[i].from_lane) == d for i, _ in pairs)
        scores[d] = LaneChangeScore(n_true, n_det, n_match)
    scores[POOLED] = LaneChangeScore(len(truth), len(detected), len(pairs))
    return MetricsReport(lane_change=scores)
