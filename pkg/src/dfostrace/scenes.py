"""Ready-made scene specifications used by the CLI presets and the test suites."""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from .simulator import Lane, SceneSpec, VehicleClass, VehicleSpec, CLASS_AMPLITUDE, default_lane_models
from .waterfall import SensorGeometry, channels_for_span


def weakest_peak(spec: SceneSpec) -> float:
    """Smallest noiseless peak intensity any vehicle reaches in ``spec``."""
    near, far = spec.lane_models
    peaks = []
    for v in spec.vehicles:
        gains = {near.amplitude_gain if ln is Lane.NEAR else far.amplitude_gain for _, ln in v.lane_timeline}
        peaks.append(CLASS_AMPLITUDE[v.vehicle_class] * min(gains) * (1 + spec.modulation_depth))
    return min(peaks) if peaks else 0.0


def highway_geometry(origin_kp: float, length_km: float, spatial_resolution: float = 5.0,
                     temporal_resolution: float = 0.1) -> SensorGeometry:
    n = channels_for_span(spatial_resolution, origin_kp, origin_kp + length_km) + 1
    return SensorGeometry(spatial_resolution, temporal_resolution, origin_kp, n, 1)


def traffic_scene(
    n_vehicles: int = 20,
    length_km: float = 5.0,
    origin_kp: float = 8.3,
    noise_sigma: float = 0.0,
    seed: int = 0,
    headway_s: Tuple[float, float] = (8.0, 16.0),
    near_speed_kmh: Tuple[float, float] = (80.0, 100.0),
    far_speed_kmh: Tuple[float, float] = (100.0, 120.0),
    lane_changes: int = 0,
    large_fraction: float = 0.2,
    low_snr_sections: Sequence[Tuple[float, float, float]] = (),
    checkpoint_offset_km: float = 0.1,
    min_exit_gap_s: float = 3.0,
) -> SceneSpec:
    """Free-flowing one-direction traffic entering at ``origin_kp``.

    The near lane is the driving lane and the far lane the passing lane, so
    speeds are drawn from per-lane ranges. Vehicles never pass through each
    other within a lane on the sensed stretch (a follower is slowed so it
    leaves at least ``min_exit_gap_s`` after its leader); overtakes happen
    across lanes. ``lane_changes`` changes are spread over randomly chosen
    vehicles (at most two per vehicle, at least 25 s apart, away from the
    fiber ends). Camera checkpoints sit ``checkpoint_offset_km`` inside both
    ends of the fiber.
    """
    rng = np.random.default_rng(seed)
    g = highway_geometry(origin_kp, length_km)
    vehicles = []
    t = 2.0
    exits = []
    last_exit = {Lane.NEAR: -np.inf, Lane.FAR: -np.inf}
    length_m = length_km * 1000.0
    for i in range(n_vehicles):
        lane = Lane.NEAR if rng.random() < 0.5 else Lane.FAR
        lo, hi = near_speed_kmh if lane is Lane.NEAR else far_speed_kmh
        v = float(rng.uniform(lo, hi))
        latest = last_exit[lane] + min_exit_gap_s
        if t + length_m / (v / 3.6) < latest:
            # follower would catch its leader on the fiber: slow it down
            v = length_m / (latest - t) * 3.6
        cls = VehicleClass.LARGE if rng.random() < large_fraction else VehicleClass.SMALL
        vehicles.append(VehicleSpec(f"v{i:02d}", t, origin_kp, [(0.0, v)], [(t, lane)], cls))
        exit_t = t + length_m / (v / 3.6)
        exits.append(exit_t)
        last_exit[lane] = exit_t
        t += float(rng.uniform(*headway_s))

    changes_left = lane_changes
    order = rng.permutation(n_vehicles)
    per_vehicle = 2 if lane_changes > n_vehicles else 1
    for idx in order:
        if changes_left <= 0:
            break
        veh = vehicles[idx]
        travel = exits[idx] - veh.entry_time
        m = min(per_vehicle, changes_left)
        # keep changes clear of the fiber ends and of each other
        usable = (20.0, travel - 25.0)
        if usable[1] - usable[0] < 25.0 * m:
            continue
        slots = np.linspace(usable[0], usable[1], m + 2)[1:-1]
        jitter = rng.uniform(-5.0, 5.0, size=m)
        lane = veh.lane_timeline[0][1]
        for s in np.sort(slots + jitter):
            lane = lane.other
            veh.lane_timeline.append((round(veh.entry_time + float(s), 1), lane))
            changes_left -= 1

    duration = float(np.ceil(max(exits) + 5.0))
    checkpoints = [round(origin_kp + checkpoint_offset_km, 6), round(origin_kp + length_km - checkpoint_offset_km, 6)]
    return SceneSpec(g, duration, vehicles, noise_sigma=noise_sigma, rng_seed=seed,
                     checkpoints=checkpoints, low_snr_sections=list(low_snr_sections))


def lane_change_scene(
    n_changes: int = 30,
    noise_sigma: float = 0.0,
    seed: int = 0,
    length_km: float = 8.87,
    origin_kp: float = 8.3,
) -> SceneSpec:
    """Test vehicles making alternating lane changes along an 8.87 km stretch.

    Mirrors a test-vehicle campaign: each vehicle starts in a random lane and
    changes lane every 35-50 s, so the changes split roughly evenly between
    the two directions.
    """
    rng = np.random.default_rng(seed)
    g = highway_geometry(origin_kp, length_km)
    vehicles = []
    made = 0
    t = 2.0
    i = 0
    exits = []
    while made < n_changes:
        v = float(rng.uniform(85.0, 110.0))
        travel = length_km * 3600.0 / v
        lane = Lane.NEAR if i % 2 == 0 else Lane.FAR
        timeline = [(t, lane)]
        s = 15.0 + float(rng.uniform(0.0, 10.0))
        while s < travel - 20.0 and made < n_changes:
            lane = lane.other
            timeline.append((round(t + s, 1), lane))
            made += 1
            s += float(rng.uniform(35.0, 50.0))
        vehicles.append(VehicleSpec(f"t{i:02d}", t, origin_kp, [(0.0, v)], timeline, VehicleClass.SMALL))
        exits.append(t + travel)
        # test vehicles run one after another, well separated
        t += float(rng.uniform(40.0, 60.0))
        i += 1
    duration = float(np.ceil(max(exits) + 5.0))
    return SceneSpec(g, duration, vehicles, noise_sigma=noise_sigma, rng_seed=seed,
                     checkpoints=[origin_kp + 0.1, origin_kp + length_km - 0.1])


def fallen_object_scene(
    obstruction_kp: float = 10.35,
    n_changers: int = 10,
    n_background: int = 10,
    zone_m: float = 100.0,
    noise_sigma: float = 0.0,
    seed: int = 0,
    length_km: float = 4.0,
    origin_kp: float = 8.3,
    min_exit_gap_s: float = 3.0,
) -> SceneSpec:
    """Near-lane obstruction centred on ``obstruction_kp``.

    ``n_changers`` near-lane vehicles move to the far lane inside the
    ``zone_m`` stretch centred on the obstruction; background vehicles stay
    in the far lane. Traffic queues past the obstruction without overtaking
    (each vehicle leaves the fiber at least ``min_exit_gap_s`` after the
    one ahead), and all of it passes within five minutes.
    """
    rng = np.random.default_rng(seed)
    g = highway_geometry(origin_kp, length_km)
    vehicles = []
    kinds = np.array([True] * n_changers + [False] * n_background)
    rng.shuffle(kinds)
    t = 2.0
    exits = []
    last_exit = -np.inf
    length_m = length_km * 1000.0
    for i, changer in enumerate(kinds):
        v = float(rng.uniform(80.0, 110.0))
        if t + length_m / (v / 3.6) < last_exit + min_exit_gap_s:
            v = length_m / (last_exit + min_exit_gap_s - t) * 3.6
        if changer:
            change_kp = obstruction_kp + float(rng.uniform(-0.5, 0.5)) * zone_m / 1000.0
            t_change = t + (change_kp - origin_kp) * 3600.0 / v
            timeline = [(t, Lane.NEAR), (round(t_change, 1), Lane.FAR)]
        else:
            timeline = [(t, Lane.FAR)]
        vehicles.append(VehicleSpec(f"f{i:02d}", t, origin_kp, [(0.0, v)], timeline, VehicleClass.SMALL))
        last_exit = t + length_m / (v / 3.6)
        exits.append(last_exit)
        t += float(rng.uniform(6.0, 10.0))
    duration = float(np.ceil(max(exits) + 5.0))
    return SceneSpec(g, duration, vehicles, noise_sigma=noise_sigma, rng_seed=seed,
                     checkpoints=[origin_kp + 0.1, origin_kp + length_km - 0.1])


def calibration_scene(
    n_per_lane: int = 30,
    noise_sigma: float = 0.0,
    seed: int = 0,
    carrier_spread_hz: float = 0.15,
    length_km: float = 1.0,
    origin_kp: float = 8.3,
) -> SceneSpec:
    """Constant-lane vehicles (half near, half far) for threshold calibration.

    Per-vehicle carrier offsets drawn from N(0, ``carrier_spread_hz``) give
    the centroid distributions their spread.
    """
    rng = np.random.default_rng(seed)
    g = highway_geometry(origin_kp, length_km)
    vehicles = []
    t = 2.0
    exits = []
    lanes = [Lane.NEAR] * n_per_lane + [Lane.FAR] * n_per_lane
    rng.shuffle(lanes)
    for i, lane in enumerate(lanes):
        v = float(rng.uniform(80.0, 110.0))
        off = float(rng.normal(0.0, carrier_spread_hz))
        vehicles.append(VehicleSpec(f"c{i:02d}", t, origin_kp, [(0.0, v)], [(t, lane)],
                                    VehicleClass.SMALL, carrier_offset=off))
        exits.append(t + length_km * 3600.0 / v)
        t += float(rng.uniform(15.0, 20.0))
    duration = float(np.ceil(max(exits) + 5.0))
    return SceneSpec(g, duration, vehicles, noise_sigma=noise_sigma, rng_seed=seed,
                     checkpoints=[origin_kp + 0.05, origin_kp + length_km - 0.05])
