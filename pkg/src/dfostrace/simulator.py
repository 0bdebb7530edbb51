"""
Synthetic DFOS scenes with exact ground truth.

Each vehicle is rendered as a Gaussian intensity kernel across channels,
centered on its true position, whose amplitude is modulated by a sinusoid at
the carrier frequency of its current lane. Near-lane vehicles are louder and
vibrate at a higher carrier than far-lane vehicles.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .waterfall import SensorGeometry, Waterfall, kp_to_channel_float


class Lane(str, enum.Enum):
    NEAR = "near"
    FAR = "far"

    @classmethod
    def parse(cls, value) -> "Lane":
        if isinstance(value, Lane):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown lane {value!r}, expected 'near' or 'far'") from None

    @property
    def other(self) -> "Lane":
        return Lane.FAR if self is Lane.NEAR else Lane.NEAR


class VehicleClass(str, enum.Enum):
    LARGE = "large"
    SMALL = "small"

    @classmethod
    def parse(cls, value) -> "VehicleClass":
        if isinstance(value, VehicleClass):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown vehicle class {value!r}, expected 'large' or 'small'") from None


CLASS_AMPLITUDE = {VehicleClass.SMALL: 10.0, VehicleClass.LARGE: 15.0}


class SceneError(ValueError):
    """Invalid scene specification."""

    def __init__(self, message, field_name: Optional[str] = None, vehicle: Optional[str] = None):
        super().__init__(message)
        self.field_name = field_name
        self.vehicle = vehicle


@dataclass(frozen=True)
class LaneModel:
    lane: Lane
    amplitude_gain: float
    carrier_frequency: float


def default_lane_models() -> Tuple[LaneModel, LaneModel]:
    """Near and far lane models; carriers straddle 2.7 Hz symmetrically."""
    return (
        LaneModel(Lane.NEAR, amplitude_gain=1.0, carrier_frequency=3.2),
        LaneModel(Lane.FAR, amplitude_gain=0.6, carrier_frequency=2.2),
    )


def check_lane_models(near: LaneModel, far: LaneModel) -> None:
    if not near.amplitude_gain > far.amplitude_gain > 0:
        raise SceneError("lane amplitude gains must satisfy near > far > 0", "amplitude_gain")
    if not near.carrier_frequency > far.carrier_frequency > 0:
        raise SceneError("lane carrier frequencies must satisfy near > far > 0", "carrier_frequency")


@dataclass
class VehicleSpec:
    """One simulated vehicle.

    ``speed_profile`` is a list of (offset from entry in s, km/h) breakpoints,
    piecewise constant, first offset 0. ``lane_timeline`` holds (scene time s,
    lane) transitions; the first entry is the lane at entry. ``direction`` is
    +1 for travel towards increasing KP, -1 otherwise.
    """

    vehicle_id: str
    entry_time: float
    entry_kp: float
    speed_profile: List[Tuple[float, float]]
    lane_timeline: List[Tuple[float, Lane]]
    vehicle_class: VehicleClass = VehicleClass.SMALL
    direction: int = 1
    carrier_offset: float = 0.0
    dropouts: List[Tuple[float, float]] = field(default_factory=list)

    def validate(self, v_max: float) -> None:
        vid = self.vehicle_id
        if not self.speed_profile:
            raise SceneError(f"vehicle {vid}: speed profile is empty", "speeds", vid)
        offsets = [o for o, _ in self.speed_profile]
        if offsets[0] != 0:
            raise SceneError(f"vehicle {vid}: speed profile must start at offset 0", "speeds", vid)
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise SceneError(f"vehicle {vid}: speed offsets must strictly increase", "speeds", vid)
        for _, v in self.speed_profile:
            if not (0 <= v <= v_max):
                raise SceneError(f"vehicle {vid}: speed {v} km/h outside [0, {v_max}]", "speeds", vid)
        if not self.lane_timeline:
            raise SceneError(f"vehicle {vid}: lane timeline is empty", "lanes", vid)
        times = [t for t, _ in self.lane_timeline]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise SceneError(f"vehicle {vid}: lane timeline times must strictly increase", "lanes", vid)
        if self.direction not in (1, -1):
            raise SceneError(f"vehicle {vid}: direction must be +1 or -1", "direction", vid)
        for a, b in self.dropouts:
            if not b > a:
                raise SceneError(f"vehicle {vid}: dropout interval must have end > start", "dropouts", vid)

    def lane_at(self, t) -> np.ndarray:
        """Lane index per time (0 = near, 1 = far); before the first entry uses the first lane."""
        times = np.array([tt for tt, _ in self.lane_timeline])
        lanes = np.array([0 if ln is Lane.NEAR else 1 for _, ln in self.lane_timeline])
        idx = np.searchsorted(times, np.asarray(t, dtype=float), side="right") - 1
        return lanes[np.clip(idx, 0, len(lanes) - 1)]

    def kp_at(self, t) -> np.ndarray:
        """Exact position (km) at scene times ``t`` (entry position before entry)."""
        tau = np.maximum(np.asarray(t, dtype=float) - self.entry_time, 0.0)
        dist_m = np.zeros_like(tau)
        offsets = [o for o, _ in self.speed_profile] + [math.inf]
        for (o, v), nxt in zip(self.speed_profile, offsets[1:]):
            seg = np.clip(tau - o, 0.0, nxt - o)
            dist_m += seg * v / 3.6
        return self.entry_kp + self.direction * dist_m / 1000.0

    def time_at_kp(self, kp: float) -> Optional[float]:
        """Analytic first crossing time of ``kp``, or None if never reached."""
        target = (kp - self.entry_kp) * self.direction * 1000.0
        if target < 0:
            return None
        if target == 0:
            return self.entry_time
        covered = 0.0
        offsets = [o for o, _ in self.speed_profile] + [math.inf]
        for (o, v), nxt in zip(self.speed_profile, offsets[1:]):
            span = (nxt - o) * v / 3.6
            if v > 0 and covered + span >= target:
                return self.entry_time + o + (target - covered) / (v / 3.6)
            covered += span
        return None


@dataclass
class SceneSpec:
    geometry: SensorGeometry
    duration: float
    vehicles: List[VehicleSpec]
    noise_sigma: float = 0.0
    low_snr_sections: List[Tuple[float, float, float]] = field(default_factory=list)
    rng_seed: int = 0
    checkpoints: List[float] = field(default_factory=list)
    kernel_sigma: float = 3.0
    modulation_depth: float = 0.5
    v_max: float = 160.0
    lane_models: Tuple[LaneModel, LaneModel] = field(default_factory=default_lane_models)
    start_time: float = 0.0

    def validate(self) -> None:
        if not self.duration > 0:
            raise SceneError(f"duration must be positive, got {self.duration}", "duration_s")
        if not self.noise_sigma >= 0:
            raise SceneError(f"noise_sigma must be >= 0, got {self.noise_sigma}", "noise_sigma")
        if not self.kernel_sigma > 0:
            raise SceneError("kernel_sigma must be positive", "kernel_sigma")
        if not 0 <= self.modulation_depth <= 1:
            raise SceneError("modulation_depth must be in [0, 1]", "modulation_depth")
        for lo, hi, att in self.low_snr_sections:
            if not 0 < att <= 1:
                raise SceneError(f"attenuation factor {att} outside (0, 1]", "low_snr")
            if not hi > lo:
                raise SceneError(f"low-SNR section [{lo}, {hi}] is empty", "low_snr")
        check_lane_models(*self.lane_models)
        seen = set()
        for v in self.vehicles:
            if v.vehicle_id in seen:
                raise SceneError(f"duplicate vehicle id {v.vehicle_id}", "vehicle", v.vehicle_id)
            seen.add(v.vehicle_id)
            v.validate(self.v_max)

    @property
    def n_times(self) -> int:
        return int(round(self.duration / self.geometry.temporal_resolution))

    def times(self) -> np.ndarray:
        return self.start_time + np.arange(self.n_times) * self.geometry.temporal_resolution


@dataclass(frozen=True)
class LaneChange:
    vehicle_id: str
    time: float
    kp: float
    from_lane: Lane
    to_lane: Lane


@dataclass(frozen=True)
class CheckpointRecord:
    """True arrival of a vehicle at a camera checkpoint."""

    kp: float
    vehicle_id: str
    time: float
    vehicle_class: VehicleClass = VehicleClass.SMALL


@dataclass
class GroundTruth:
    times: np.ndarray
    positions: Dict[str, np.ndarray]  # vehicle_id -> kp per time sample (nan outside range/entry)
    lane_timelines: Dict[str, List[Tuple[float, Lane]]]
    lane_changes: List[LaneChange]
    checkpoints: List[CheckpointRecord]
    truncated: Dict[str, bool]  # vehicle left the sensed KP range during the scene
    vehicle_classes: Dict[str, VehicleClass] = field(default_factory=dict)

    def lane_of(self, vehicle_id: str, t) -> np.ndarray:
        timeline = self.lane_timelines[vehicle_id]
        times = np.array([tt for tt, _ in timeline])
        lanes = np.array([ln.value for _, ln in timeline], dtype=object)
        idx = np.searchsorted(times, np.asarray(t, dtype=float), side="right") - 1
        return lanes[np.clip(idx, 0, len(lanes) - 1)]


def vehicle_signal(spec: SceneSpec, vehicle: VehicleSpec, seed_phase: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """Noise-free contribution of one vehicle to the waterfall.

    Returns (grid, channel position per time sample; nan while not on the fiber).
    """
    g = spec.geometry
    near, far = spec.lane_models
    t = spec.times()
    n_t, n_c = len(t), g.channel_count
    grid = np.zeros((n_t, n_c), dtype=np.float64)

    kp = vehicle.kp_at(t)
    pos = kp_to_channel_float(g, kp)
    present = (t >= vehicle.entry_time) & (pos >= -0.5) & (pos <= n_c - 0.5)
    pos = np.where(present, pos, np.nan)
    if not present.any():
        return grid, pos

    lane = vehicle.lane_at(t)
    gain = np.where(lane == 0, near.amplitude_gain, far.amplitude_gain)
    carrier = np.where(lane == 0, near.carrier_frequency, far.carrier_frequency) + vehicle.carrier_offset
    # phase integrates the carrier so lane switches keep the modulation continuous
    phase = 2 * np.pi * np.cumsum(carrier) * g.temporal_resolution
    phase -= phase[0]
    if seed_phase:
        phase += _vehicle_phase(vehicle.vehicle_id)
    envelope = np.maximum(1.0 + spec.modulation_depth * np.sin(phase), 0.0)
    amp = CLASS_AMPLITUDE[vehicle.vehicle_class] * gain * envelope
    for a, b in vehicle.dropouts:
        amp[(t >= a) & (t < b)] = 0.0

    # truncated Gaussian across channels (4 sigma)
    half = int(math.ceil(4 * spec.kernel_sigma))
    rows = np.nonzero(present)[0]
    centers = pos[rows]
    base = np.floor(centers).astype(int)
    offsets = np.arange(-half, half + 2)
    cols = base[:, None] + offsets[None, :]
    d = cols - centers[:, None]
    kernel = np.exp(-0.5 * (d / spec.kernel_sigma) ** 2)
    kernel[np.abs(d) > 4 * spec.kernel_sigma] = 0.0
    valid = (cols >= 0) & (cols < n_c)
    vals = kernel * amp[rows][:, None]
    rr = np.broadcast_to(rows[:, None], cols.shape)
    grid[rr[valid], cols[valid]] = vals[valid]
    return grid, pos


def _vehicle_phase(vehicle_id: str) -> float:
    # stable per-vehicle phase so concurrent vehicles do not vibrate in lockstep
    h = 0
    for ch in str(vehicle_id):
        h = (h * 131 + ord(ch)) % 1_000_003
    return 2 * np.pi * (h % 1000) / 1000.0


def attenuation_profile(spec: SceneSpec) -> np.ndarray:
    g = spec.geometry
    kp = g.origin_kp + g.kp_direction * np.arange(g.channel_count) * g.spatial_resolution / 1000.0
    att = np.ones(g.channel_count)
    for lo, hi, factor in spec.low_snr_sections:
        att[(kp >= min(lo, hi)) & (kp <= max(lo, hi))] *= factor
    return att


def render_signal(spec: SceneSpec) -> np.ndarray:
    """Noise-free, attenuated sum of all vehicle contributions (float64)."""
    g = spec.geometry
    total = np.zeros((spec.n_times, g.channel_count), dtype=np.float64)
    for v in spec.vehicles:
        grid, _ = vehicle_signal(spec, v)
        total += grid
    total *= attenuation_profile(spec)[None, :]
    return total


def noise_realization(spec: SceneSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.rng_seed)
    shape = (spec.n_times, spec.geometry.channel_count)
    if spec.noise_sigma == 0:
        return np.zeros(shape)
    return rng.normal(0.0, spec.noise_sigma, size=shape)


def render_scene(spec: SceneSpec) -> Tuple[Waterfall, GroundTruth]:
    """Render ``spec`` to a waterfall and its exact ground truth."""
    spec.validate()
    signal = render_signal(spec)
    samples = np.abs(signal + noise_realization(spec)).astype(np.float32)
    wf = Waterfall(spec.geometry, spec.start_time, samples)
    return wf, ground_truth(spec)


def ground_truth(spec: SceneSpec) -> GroundTruth:
    g = spec.geometry
    t = spec.times()
    lo_kp, hi_kp = g.kp_range
    positions: Dict[str, np.ndarray] = {}
    truncated: Dict[str, bool] = {}
    changes: List[LaneChange] = []
    checkpoints: List[CheckpointRecord] = []
    t_end = spec.start_time + spec.duration
    for v in spec.vehicles:
        kp = v.kp_at(t)
        inside = (t >= v.entry_time) & (kp >= lo_kp - 1e-9) & (kp <= hi_kp + 1e-9)
        positions[v.vehicle_id] = np.where(inside, kp, np.nan)
        # trace truncated when the vehicle drives off the sensed range before the scene ends
        last_kp = float(v.kp_at(t_end))
        truncated[v.vehicle_id] = not (lo_kp <= last_kp <= hi_kp)
        for (t0, l0), (t1, l1) in zip(v.lane_timeline, v.lane_timeline[1:]):
            if l0 is l1 or not (spec.start_time <= t1 < t_end):
                continue
            kp1 = float(v.kp_at(t1))
            if lo_kp <= kp1 <= hi_kp:
                changes.append(LaneChange(v.vehicle_id, t1, kp1, l0, l1))
        for ck in spec.checkpoints:
            ta = v.time_at_kp(ck)
            if ta is not None and spec.start_time <= ta < t_end:
                checkpoints.append(CheckpointRecord(ck, v.vehicle_id, ta, v.vehicle_class))
    changes.sort(key=lambda c: (c.time, c.vehicle_id))
    return GroundTruth(
        times=t,
        positions=positions,
        lane_timelines={v.vehicle_id: list(v.lane_timeline) for v in spec.vehicles},
        lane_changes=changes,
        checkpoints=checkpoints,
        truncated=truncated,
        vehicle_classes={v.vehicle_id: v.vehicle_class for v in spec.vehicles},
    )
