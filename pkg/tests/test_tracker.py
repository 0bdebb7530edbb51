import dataclasses

import numpy as np
import pytest

from dfostrace.clustering import Cluster
from dfostrace.scenes import highway_geometry
from dfostrace.simulator import Lane, SceneSpec, VehicleClass, VehicleSpec, render_scene
from dfostrace.tracker import (
    HitPoint,
    TrackerConfig,
    TrackingError,
    TrackStatus,
    estimate_speed,
    extract_candidate_hits,
    extract_hit_points,
    fit_line,
    gate_bounds,
    gate_hit_points,
    read_summary_csv,
    read_track_csv,
    seed_track,
    select_nearest,
    summary_row,
    track_step,
    track_vehicle,
    write_summary_csv,
    write_track_csv,
)
from dfostrace.waterfall import SensorGeometry, Waterfall

from conftest import single_vehicle_scene, true_channel

G5 = SensorGeometry(5.0, 0.1, 8.3, 400, 1)


def cluster_of(points):
    pts = np.asarray(points, dtype=float)
    return Cluster(pts.mean(axis=0), np.arange(len(pts)), pts)


def trace_error(track, gt, vid="a"):
    g = track.geometry
    rows = np.array([p.time_index for p in track.trace])
    ch = np.array([p.channel for p in track.trace])
    truth = true_channel(gt, vid, g)[rows]
    ok = ~np.isnan(truth)
    return np.abs(ch[ok] - truth[ok])


def seed_of(gt, vid="a"):
    first = min((c for c in gt.checkpoints if c.vehicle_id == vid), key=lambda c: c.time)
    return first.time, first.kp


class TestConfig:
    @pytest.mark.parametrize("kw", [
        dict(window_length=1.0, update_interval=1.0), dict(v_min=200.0), dict(k_vehicles=0),
        dict(direction=0), dict(gate_tolerance=-0.1), dict(max_coast=-1.0),
    ])
    def test_invalid(self, kw):
        with pytest.raises(TrackingError):
            TrackerConfig(**kw)


class TestExtraction:
    def test_noiseless_one_hit_per_sample(self, near_render):
        w, gt = near_render
        rows = (w.row_of(5.0), w.row_of(30.0))
        hits = extract_hit_points(w, (0, w.n_channels), rows=rows)
        assert len(hits) == rows[1] - rows[0]
        truth = true_channel(gt, "a", w.geometry)
        assert max(abs(h.channel - truth[h.time_index]) for h in hits) <= 1.0

    def test_all_zero(self):
        w = Waterfall(G5, 0.0, np.zeros((20, 400)))
        assert extract_hit_points(w, (0, 400)) == []

    def test_tie_goes_to_lower_channel(self):
        data = np.zeros((1, 400))
        data[0, [50, 70]] = 5.0
        w = Waterfall(G5, 0.0, data)
        assert extract_hit_points(w, (0, 400))[0].channel == 50

    def test_band_checked(self):
        w = Waterfall(G5, 0.0, np.zeros((2, 400)))
        with pytest.raises(TrackingError):
            extract_hit_points(w, (10, 500))

    def test_intensity_scale_invariant(self, near_render):
        w, _ = near_render
        scaled = Waterfall(w.geometry, w.start_time, w.samples * 7.5)
        a = extract_hit_points(w, (0, w.n_channels))
        b = extract_hit_points(scaled, (0, w.n_channels))
        assert [(h.time_index, h.channel) for h in a] == [(h.time_index, h.channel) for h in b]


class TestGate:
    def test_worked_example(self):
        cfg = TrackerConfig(gate_tolerance=0.5)
        assert gate_bounds(100.0, 1.0, cfg, G5) == (2, 8)

    def test_stationary_hit_kept_at_zero_speed(self):
        cfg = TrackerConfig(v_min=0.0)
        kept = gate_hit_points([HitPoint(11, 40, 1.0)], (10, 40.0), 0.0, cfg, G5)
        assert len(kept) == 1

    def test_backward_hit_rejected(self):
        cfg = TrackerConfig()
        assert gate_hit_points([HitPoint(20, 35, 1.0)], (10, 40.0), 100.0, cfg, G5) == []

    def test_within_bounds_kept(self):
        cfg = TrackerConfig()
        hits = [HitPoint(20, 40 + d, 1.0) for d in range(0, 12)]
        kept = gate_hit_points(hits, (10, 40.0), 100.0, cfg, G5)
        # one hit per time index; the first one inside [2, 8] is taken
        assert [h.channel - 40 for h in kept] == [2]


class TestSelectNearest:
    def test_identity_with_one_hit_per_time(self):
        hits = [HitPoint(t, 10 + t, 1.0) for t in range(5)]
        assert select_nearest(hits, (0, 10.0)) == hits

    def test_nearer_kept(self):
        hits = [HitPoint(1, 13, 1.0), HitPoint(1, 3, 1.0)]
        assert select_nearest(hits, (0, 10.0)) == [hits[0]]
        hits = [HitPoint(1, 17, 1.0), HitPoint(1, 7, 1.0)]
        assert select_nearest(hits, (0, 10.0))[0].channel == 7

    def test_spurious_peaks_removed(self, near_render):
        w, gt = near_render
        rows = (w.row_of(5.0), w.row_of(15.0))
        band = (0, w.n_channels)
        clean = extract_candidate_hits(w, band, rows, 4, noise_floor_mads=0.0)
        data = np.array(w.samples)
        rng = np.random.default_rng(0)
        for r in range(*rows)[::7]:
            c = int(true_channel(gt, "a", w.geometry)[r]) + int(rng.choice([-1, 1])) * int(rng.integers(25, 40))
            if 0 <= c < w.n_channels:
                data[r, c] = 20.0
        noisy = Waterfall(w.geometry, w.start_time, data)
        cands = extract_candidate_hits(noisy, band, rows, 4, noise_floor_mads=0.0)
        assert len(cands) > len(clean)
        start = clean[0]
        v = w.geometry.channels_per_sample(100.0)
        picked = select_nearest(cands, (start.time_index, float(start.channel)), v)
        assert [(h.time_index, h.channel) for h in picked] == [(h.time_index, h.channel) for h in clean]


class TestSpeed:
    def test_exact_collinear(self):
        pts = [(t, 3.0 + 2.0 * t) for t in range(10)]
        g = SensorGeometry(5.0, 0.25, 0.0, 10, 1)
        speed, direction = estimate_speed(cluster_of(pts), g)
        assert speed == pytest.approx(144.0, abs=1e-9)
        assert direction == 1

    def test_horizontal_is_zero(self):
        speed, _ = estimate_speed(cluster_of([(t, 7.0) for t in range(5)]), G5)
        assert speed == 0.0

    def test_translation_invariant(self):
        pts = np.array([(t, 1.7 * t + 0.3 * (-1) ** t) for t in range(12)], dtype=float)
        base, _ = estimate_speed(cluster_of(pts), G5)
        shifted, _ = estimate_speed(cluster_of(pts + [100.0, -40.0]), G5)
        assert shifted == pytest.approx(base, rel=1e-12)

    def test_degenerate_fit(self):
        with pytest.raises(TrackingError):
            fit_line(np.array([[3.0, 1.0], [3.0, 2.0]]))

    def test_noiseless_render_within_two_percent(self, near_render):
        w, gt = near_render
        track = track_vehicle(w, seed_of(gt))
        assert track.speeds
        assert all(abs(s - 100.0) <= 2.0 for s in track.speeds)


class TestTrackVehicle:
    def test_noiseless_completed_within_three_channels(self, near_render):
        w, gt = near_render
        track = track_vehicle(w, seed_of(gt))
        assert track.status is TrackStatus.COMPLETED
        assert trace_error(track, gt).max() < 3.0

    def test_hit_times_increase_and_positions_monotone(self, near_render):
        w, gt = near_render
        track = track_vehicle(w, seed_of(gt))
        times = [h.time_index for h in track.hits]
        assert all(b > a for a, b in zip(times, times[1:]))
        ch = [p.channel for p in track.trace]
        assert all(b >= a for a, b in zip(ch, ch[1:]))

    def test_all_noise_is_lost(self):
        g = highway_geometry(8.3, 1.0)
        rng = np.random.default_rng(0)
        w = Waterfall(g, 0.0, np.abs(rng.normal(0.0, 1.0, (600, g.channel_count))))
        cfg = TrackerConfig()
        track = track_vehicle(w, (5.0, 8.4), cfg)
        assert track.status is TrackStatus.LOST
        assert track.coast_time > cfg.max_coast

    def test_short_dropout_coasts_then_reacquires(self):
        spec = single_vehicle_scene(dropouts=[(20.0, 23.0)], length_km=1.5)
        w, gt = render_scene(spec)
        track = track_vehicle(w, seed_of(gt))
        statuses = [p.status for p in track.trace]
        first_coast = statuses.index(TrackStatus.COASTING)
        assert TrackStatus.ACTIVE in statuses[first_coast:]
        assert track.status is TrackStatus.COMPLETED
        assert trace_error(track, gt).max() < 3.0

    def test_long_dropout_is_lost(self):
        spec = single_vehicle_scene(dropouts=[(20.0, 30.0)], length_km=1.5)
        w, gt = render_scene(spec)
        assert track_vehicle(w, seed_of(gt)).status is TrackStatus.LOST

    @pytest.mark.parametrize("k", [1, 2])
    def test_crossing_vehicles_follow_the_seeded_one(self, k):
        g = highway_geometry(8.3, 1.5)
        va = VehicleSpec("A", 2.0, 8.3, [(0.0, 80.0)], [(2.0, Lane.NEAR)])
        vb = VehicleSpec("B", 8.0, 8.3, [(0.0, 120.0)], [(8.0, Lane.FAR)])
        w, gt = render_scene(SceneSpec(g, 75.0, [va, vb], checkpoints=[8.35, 9.75]))
        track = track_vehicle(w, seed_of(gt, "A"), TrackerConfig(k_vehicles=k), "A")
        assert track.status is TrackStatus.COMPLETED
        assert trace_error(track, gt, "A").max() < 3.0
        dest = max((c for c in gt.checkpoints if c.vehicle_id == "A"), key=lambda c: c.time)
        assert abs(track.arrival_time(dest.kp) - dest.time) < 1.0

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_far_to_near_change_keeps_lock(self, seed):
        # the footprint brightens at the change; the track must not coast on a stale speed
        spec = single_vehicle_scene(lane_timeline=[(2.0, Lane.FAR), (30.0, Lane.NEAR)], length_km=3.0,
                                    duration=120.0, noise_sigma=3.0, seed=seed)
        w, gt = render_scene(spec)
        track = track_vehicle(w, seed_of(gt))
        assert track.status is TrackStatus.COMPLETED
        assert trace_error(track, gt).max() < 2.0

    def test_overtake_does_not_reset_footprint(self, caplog):
        g = highway_geometry(8.3, 2.0)
        slow = VehicleSpec("A", 2.0, 8.3, [(0.0, 84.0)], [(2.0, Lane.FAR)], VehicleClass.LARGE)
        fast = VehicleSpec("B", 12.0, 8.3, [(0.0, 110.0)], [(12.0, Lane.NEAR)])
        w, gt = render_scene(SceneSpec(g, 100.0, [slow, fast], checkpoints=[8.35, 10.25]))
        with caplog.at_level("DEBUG", logger="dfostrace.tracker"):
            track = track_vehicle(w, seed_of(gt, "A"), track_id="A")
        assert "footprint changed" not in caplog.text
        assert trace_error(track, gt, "A").max() < 3.0

    def test_long_stretch_arrival_within_two_seconds(self):
        spec = single_vehicle_scene(length_km=8.87, duration=340.0, checkpoints=[8.4, 17.07])
        w, gt = render_scene(spec)
        track = track_vehicle(w, seed_of(gt))
        dest = max(gt.checkpoints, key=lambda c: c.time)
        assert abs(track.arrival_time(dest.kp) - dest.time) < 2.0

    def test_seed_outside_range(self, near_render):
        w, _ = near_render
        with pytest.raises(TrackingError):
            seed_track(w, (5.0, 30.0))
        with pytest.raises(TrackingError):
            seed_track(w, (-5.0, 8.4))

    def test_step_on_finished_track(self, near_render):
        w, gt = near_render
        track = track_vehicle(w, seed_of(gt))
        with pytest.raises(TrackingError):
            track_step(track, w, TrackerConfig())


class TestTrackIO:
    def test_csv_round_trip(self, near_render, tmp_path):
        w, gt = near_render
        track = track_vehicle(w, seed_of(gt), track_id="a")
        write_track_csv(track, tmp_path / "a.csv")
        write_summary_csv([summary_row(track)], tmp_path / "summary.csv")
        row = read_summary_csv(tmp_path / "summary.csv")[0]
        back = read_track_csv(tmp_path / "a.csv", w.geometry, w.start_time, "a",
                              seed=(float(row["start_time_s"]), float(row["start_kp"])), status=row["status"])
        assert back.status is track.status
        assert [p.time for p in back.trace] == [p.time for p in track.trace]
        assert back.arrival_time(9.25) == pytest.approx(track.arrival_time(9.25), abs=1e-9)
