import json

import numpy as np
import pytest

from dfostrace.lanes import (
    CentroidThreshold,
    LaneAnalysisError,
    LaneChangeEvent,
    VibrationSeries,
    calibrate_threshold,
    classify_lane,
    detect_lane_changes,
    extract_vibration_series,
    load_threshold,
    read_events_csv,
    read_events_jsonl,
    save_threshold,
    spectral_centroid,
    write_events_csv,
    write_events_jsonl,
)
from dfostrace.simulator import Lane, render_scene
from dfostrace.tracker import TracePoint, TrackStatus, VehicleTrack, track_vehicle
from dfostrace.waterfall import SensorGeometry, Waterfall

from conftest import single_vehicle_scene

FS = 10.0


def tone(f, seconds=10.0, fs=FS, amp=1.0, phase=0.3):
    t = np.arange(int(round(seconds * fs))) / fs
    return amp * np.sin(2 * np.pi * f * t + phase)


def stationary_track(geometry, n_rows, channel=5, track_id="s"):
    """Track parked on one channel for the whole waterfall."""
    dt = geometry.temporal_resolution
    trace = [TracePoint(r, r * dt, float(channel), geometry.origin_kp, 0.0, TrackStatus.ACTIVE)
             for r in range(0, n_rows, 10)]
    trace.append(TracePoint(n_rows - 1, (n_rows - 1) * dt, float(channel), geometry.origin_kp, 0.0,
                            TrackStatus.ACTIVE))
    return VehicleTrack(track_id, geometry, 0.0, (0, float(channel)), trace=trace)


def carrier_waterfall(segments, channels=11, channel=5):
    """Waterfall whose one active channel carries (seconds, Hz) tone segments."""
    g = SensorGeometry(5.0, 1.0 / FS, 8.3, channels, 1)
    parts = []
    phase = 0.0
    for seconds, f in segments:
        n = int(round(seconds * FS))
        t = np.arange(n) / FS
        parts.append(5.0 + 2.5 * np.sin(phase + 2 * np.pi * f * t))
        phase += 2 * np.pi * f * n / FS
    col = np.concatenate(parts)
    data = np.zeros((len(col), channels))
    data[:, channel] = col
    return Waterfall(g, 0.0, data), stationary_track(g, len(col), channel)


def seed_of(gt, vid="a"):
    first = min((c for c in gt.checkpoints if c.vehicle_id == vid), key=lambda c: c.time)
    return first.time, first.kp


class TestSpectralCentroid:
    def test_three_hz_tone(self):
        assert spectral_centroid(tone(3.0), FS) == pytest.approx(3.0, abs=0.1)

    @pytest.mark.parametrize("f0", [1.0, 2.0, 3.0, 4.0])
    def test_single_tones(self, f0):
        assert abs(spectral_centroid(tone(f0), FS) - f0) <= 0.1

    def test_two_equal_tones(self):
        assert spectral_centroid(tone(2.0) + tone(4.0, phase=1.1), FS) == pytest.approx(3.0, abs=0.1)

    def test_scale_invariant(self):
        x = tone(2.3) + 0.4 * tone(3.7)
        assert spectral_centroid(3.5 * x, FS) == spectral_centroid(x, FS) or \
            spectral_centroid(3.5 * x, FS) == pytest.approx(spectral_centroid(x, FS), rel=1e-12)

    def test_constant_series_is_error(self):
        with pytest.raises(LaneAnalysisError):
            spectral_centroid(np.full(50, 4.2), FS)

    def test_too_short(self):
        with pytest.raises(LaneAnalysisError):
            spectral_centroid(tone(3.0, seconds=0.5), FS)

    def test_accepts_series_object(self):
        s = VibrationSeries(tone(2.0), FS)
        assert spectral_centroid(s) == pytest.approx(2.0, abs=0.1)


class TestVibrationSeries:
    def test_constant_ridge_is_zero(self):
        g = SensorGeometry(5.0, 0.1, 8.3, 11, 1)
        data = np.zeros((100, 11))
        data[:, 5] = 7.0
        w = Waterfall(g, 0.0, data)
        s = extract_vibration_series(w, stationary_track(g, 100), 0.0, 9.0)
        np.testing.assert_allclose(s.values, 0.0, atol=1e-12)

    def test_near_lane_dominated_by_carrier(self, near_render):
        w, gt = near_render
        track = track_vehicle(w, seed_of(gt))
        s = extract_vibration_series(w, track, 6.0, 26.0)
        mag = np.abs(np.fft.rfft(s.values))
        freqs = np.fft.rfftfreq(len(s.values), 1.0 / s.sample_rate)
        assert abs(freqs[np.argmax(mag[1:]) + 1] - 3.2) <= 0.05 + 1e-9

    def test_interval_before_track(self, near_render):
        w, gt = near_render
        track = track_vehicle(w, seed_of(gt))
        with pytest.raises(LaneAnalysisError):
            extract_vibration_series(w, track, 0.0, track.first_time - 1.0)


class TestCalibration:
    def test_toy_classes(self):
        th = calibrate_threshold([3.0, 3.2, 3.4], [2.0, 2.2, 2.4])
        assert th.value == pytest.approx(2.7)
        assert th.misclassification == 0.0

    def test_inverted(self):
        with pytest.raises(LaneAnalysisError, match="inverted"):
            calibrate_threshold([2.0], [3.0])

    def test_empty_class(self):
        with pytest.raises(LaneAnalysisError):
            calibrate_threshold([], [2.0])

    def test_overlap_counts_errors(self):
        th = calibrate_threshold([3.0, 3.2, 2.1], [2.0, 2.2, 2.4])
        assert th.misclassification == pytest.approx(1 / 6)

    def test_threshold_validation(self):
        with pytest.raises(LaneAnalysisError):
            CentroidThreshold(0.0)
        with pytest.raises(LaneAnalysisError):
            CentroidThreshold(-1.0)

    def test_save_load(self, tmp_path):
        th = calibrate_threshold([3.0, 3.2], [2.0, 2.2])
        save_threshold(th, tmp_path / "th.json")
        assert load_threshold(tmp_path / "th.json") == th
        (tmp_path / "bare.txt").write_text("2.7\n")
        assert load_threshold(tmp_path / "bare.txt").value == 2.7

    def test_load_rejects_nonpositive(self, tmp_path):
        (tmp_path / "th.json").write_text(json.dumps({"value": 0}))
        with pytest.raises(LaneAnalysisError):
            load_threshold(tmp_path / "th.json")


class TestClassify:
    @pytest.mark.parametrize("c, lane", [(2.0, Lane.FAR), (3.1, Lane.NEAR), (2.7, Lane.NEAR)])
    def test_rule(self, c, lane):
        assert classify_lane(c, CentroidThreshold(2.7)) is lane

    def test_float_threshold(self):
        assert classify_lane(2.69, 2.7) is Lane.FAR


class TestDetectLaneChanges:
    def test_near_to_far_at_30s(self):
        spec = single_vehicle_scene(lane_timeline=[(2.0, Lane.NEAR), (30.0, Lane.FAR)],
                                    duration=60.0, length_km=1.3)
        w, gt = render_scene(spec)
        track = track_vehicle(w, seed_of(gt))
        events = detect_lane_changes(w, track, 2.7)
        assert len(events) == 1
        e = events[0]
        assert e.to_lane is Lane.FAR and e.from_lane is Lane.NEAR
        assert abs(e.time - 30.0) <= 5.0
        assert e.centroid_after < 2.7 <= e.centroid_before

    def test_constant_lane(self, near_render, far_render):
        for w, gt in (near_render, far_render):
            track = track_vehicle(w, seed_of(gt))
            assert detect_lane_changes(w, track, 2.7) == []

    def test_flicker_shorter_than_debounce(self):
        w, track = carrier_waterfall([(10, 3.2), (1, 2.2), (10, 3.2)])
        assert detect_lane_changes(w, track, 2.7, hop=1.0, window=1.0, debounce=3, channel_halfwidth=0) == []

    def test_sustained_change_detected(self):
        w, track = carrier_waterfall([(10, 3.2), (10, 2.2)])
        events = detect_lane_changes(w, track, 2.7, hop=1.0, window=1.0, debounce=3, channel_halfwidth=0)
        assert [(e.from_lane, e.to_lane) for e in events] == [(Lane.NEAR, Lane.FAR)]
        assert abs(events[0].time - 10.0) <= 1.0

    def test_alternating_labels(self):
        w, track = carrier_waterfall([(8, 3.2), (8, 2.2), (8, 3.2), (8, 2.2)])
        events = detect_lane_changes(w, track, 2.7, hop=1.0, window=1.0, debounce=3, channel_halfwidth=0)
        assert len(events) == 3
        for a, b in zip(events, events[1:]):
            assert a.to_lane is b.from_lane
        for e in events:
            assert e.from_lane is not e.to_lane

    def test_skip_intervals_hold_label(self):
        w, track = carrier_waterfall([(10, 3.2), (4, 2.2), (10, 3.2)])
        events = detect_lane_changes(w, track, 2.7, hop=1.0, window=1.0, debounce=3, channel_halfwidth=0)
        assert len(events) == 2
        held = detect_lane_changes(w, track, 2.7, hop=1.0, window=1.0, debounce=3, channel_halfwidth=0,
                                   skip=[(9.5, 14.5)])
        assert held == []

    def test_short_track_gives_nothing(self, caplog):
        w, track = carrier_waterfall([(3, 3.2)])
        assert detect_lane_changes(w, track, 2.7) == []
        assert "shorter" in caplog.text

    def test_bad_debounce(self):
        w, track = carrier_waterfall([(10, 3.2)])
        with pytest.raises(LaneAnalysisError):
            detect_lane_changes(w, track, 2.7, debounce=0)


class TestEventIO:
    EVENTS = [
        LaneChangeEvent(31.5, 9.1, Lane.NEAR, Lane.FAR, 3.1, 2.3, "a"),
        LaneChangeEvent(80.25, 10.2, Lane.FAR, Lane.NEAR, 2.2, 3.05, "b"),
    ]

    def test_jsonl(self, tmp_path):
        write_events_jsonl(self.EVENTS, tmp_path / "e.jsonl")
        assert read_events_jsonl(tmp_path / "e.jsonl") == self.EVENTS

    def test_csv(self, tmp_path):
        write_events_csv(self.EVENTS, tmp_path / "e.csv")
        assert read_events_csv(tmp_path / "e.csv") == self.EVENTS

    def test_bad_jsonl_line(self, tmp_path):
        (tmp_path / "e.jsonl").write_text('{"time_s": 1}\n')
        with pytest.raises(LaneAnalysisError, match=":1:"):
            read_events_jsonl(tmp_path / "e.jsonl")


class TestCalibrationTies:
    def test_equidistant_candidates_pick_lower_after_scaling(self):
        near, far = [2.5, 2.879306079366791], [1.0, 2.5]
        base = calibrate_threshold(near, far)
        assert base.value == pytest.approx(1.75)
        scaled = calibrate_threshold([3.0 * x for x in near], [3.0 * x for x in far])
        assert scaled.value == pytest.approx(3.0 * base.value, rel=1e-9)
