import csv
import json
import textwrap

import pytest

from dfostrace.cli import main
from dfostrace.lanes import read_events_jsonl
from dfostrace.scenefile import read_checkpoints_csv
from dfostrace.tracker import read_summary_csv
from dfostrace.waterfall import load_waterfall

SCENE = textwrap.dedent("""\
    [scene]
    origin_kp = 8.3
    length_km = 1.5
    duration_s = 80
    noise_sigma = 0
    rng_seed = 3
    checkpoints = 8.4, 9.7

    [vehicle.a]
    entry_time_s = 2
    entry_kp = 8.3
    speed_kmh = 90
    lanes = 2:near, 30:far

    [vehicle.b]
    entry_time_s = 20
    entry_kp = 8.3
    speed_kmh = 110
    lane = far
    class = large
""")


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "scene.ini").write_text(SCENE)
    sim, trk, det, ev = (root / n for n in ("sim", "trk", "det", "ev"))
    codes = [
        run("simulate", root / "scene.ini", "--out", sim),
        run("track", sim / "waterfall.dfwf", sim / "checkpoints.csv", "--out", trk),
        run("detect", sim / "waterfall.dfwf", trk, "--threshold-hz", 2.7, "--out", det),
        run("eval", "--truth", sim, "--tracks", trk, "--events", det / "events.jsonl", "--out", ev),
    ]
    return root, codes


class TestSimulate:
    def test_writes_four_files(self, pipeline):
        root, codes = pipeline
        assert codes[0] == 0
        names = sorted(p.name for p in (root / "sim").iterdir())
        assert names == ["checkpoints.csv", "lane_changes.csv", "trace.csv", "waterfall.dfwf"]
        assert len(read_checkpoints_csv(root / "sim" / "checkpoints.csv")) == 4

    def test_summary_line(self, tmp_path, capsys):
        (tmp_path / "s.ini").write_text(SCENE)
        assert run("simulate", tmp_path / "s.ini", "--out", tmp_path / "o") == 0
        assert "simulated 2 vehicles" in capsys.readouterr().out

    def test_negative_speed(self, tmp_path, capsys):
        (tmp_path / "bad.ini").write_text(SCENE.replace("speed_kmh = 110", "speed_kmh = -5"))
        assert run("simulate", tmp_path / "bad.ini", "--out", tmp_path / "o") != 0
        err = capsys.readouterr().err
        assert "speed_kmh" in err and "bad.ini:18:" in err

    def test_rerun_byte_identical(self, pipeline, tmp_path):
        root, _ = pipeline
        assert run("simulate", root / "scene.ini", "--out", tmp_path / "again") == 0
        assert (tmp_path / "again" / "waterfall.dfwf").read_bytes() == (root / "sim" / "waterfall.dfwf").read_bytes()

    def test_seed_flag_changes_noise(self, tmp_path):
        (tmp_path / "s.ini").write_text(SCENE.replace("noise_sigma = 0", "noise_sigma = 1"))
        run("simulate", tmp_path / "s.ini", "--out", tmp_path / "a")
        run("simulate", tmp_path / "s.ini", "--out", tmp_path / "b", "--seed", 4)
        assert (tmp_path / "a" / "waterfall.dfwf").read_bytes() != (tmp_path / "b" / "waterfall.dfwf").read_bytes()

    def test_missing_scene(self, tmp_path):
        assert run("simulate", tmp_path / "nope.ini", "--out", tmp_path / "o") == 1


class TestTrack:
    def test_all_completed(self, pipeline):
        root, codes = pipeline
        assert codes[1] == 0
        rows = read_summary_csv(root / "trk" / "summary.csv")
        assert {r["track_id"]: r["status"] for r in rows} == {"a": "completed", "b": "completed"}
        assert (root / "trk" / "track_a.csv").is_file()
        assert (root / "trk" / "effective_config.txt").is_file()

    def test_empty_starts(self, pipeline, tmp_path, caplog):
        root, _ = pipeline
        (tmp_path / "starts.csv").write_text("track_id,time_s,kp\n")
        assert run("track", root / "sim" / "waterfall.dfwf", tmp_path / "starts.csv", "--out", tmp_path / "t") == 0
        assert read_summary_csv(tmp_path / "t" / "summary.csv") == []
        assert "no seeds" in caplog.text

    def test_seed_out_of_range_fails_alone(self, pipeline, tmp_path):
        root, _ = pipeline
        (tmp_path / "starts.csv").write_text("track_id,time_s,kp\na,4.0,8.4\nz,4.0,30.0\n")
        assert run("track", root / "sim" / "waterfall.dfwf", tmp_path / "starts.csv", "--out", tmp_path / "t") == 0
        status = {r["track_id"]: r["status"] for r in read_summary_csv(tmp_path / "t" / "summary.csv")}
        assert status == {"a": "completed", "z": "failed"}

    def test_unreadable_waterfall(self, pipeline, tmp_path, capsys):
        root, _ = pipeline
        (tmp_path / "junk.dfwf").write_bytes(b"not a waterfall")
        assert run("track", tmp_path / "junk.dfwf", root / "sim" / "checkpoints.csv", "--out", tmp_path / "t") != 0
        assert "error" in capsys.readouterr().err

    def test_config_file_and_flag(self, pipeline, tmp_path):
        root, _ = pipeline
        (tmp_path / "run.cfg").write_text("window_s = 8\nupdate_s = 2\n")
        assert run("track", root / "sim" / "waterfall.dfwf", root / "sim" / "checkpoints.csv",
                   "--config", tmp_path / "run.cfg", "--window-s", 12, "--out", tmp_path / "t") == 0
        text = (tmp_path / "t" / "effective_config.txt").read_text()
        assert "window_s = 12.0" in text and "update_s = 2.0" in text


class TestDetect:
    def test_outputs(self, pipeline):
        root, codes = pipeline
        assert codes[2] == 0
        events = read_events_jsonl(root / "det" / "events.jsonl")
        assert [(e.track_id, e.from_lane.value, e.to_lane.value) for e in events] == [("a", "near", "far")]
        assert (root / "det" / "alerts.jsonl").read_text() == ""
        assert (root / "det" / "events.csv").is_file()

    def test_missing_threshold(self, pipeline, tmp_path, capsys):
        root, _ = pipeline
        assert run("detect", root / "sim" / "waterfall.dfwf", root / "trk", "--out", tmp_path / "d") != 0
        assert "threshold" in capsys.readouterr().err

    @pytest.mark.parametrize("value", ["0", "-1.5"])
    def test_nonpositive_threshold_file(self, pipeline, tmp_path, value):
        root, _ = pipeline
        (tmp_path / "th.json").write_text(json.dumps({"value": float(value)}))
        assert run("detect", root / "sim" / "waterfall.dfwf", root / "trk", "--threshold-file",
                   tmp_path / "th.json", "--out", tmp_path / "d") != 0

    def test_nonpositive_threshold_flag(self, pipeline, tmp_path):
        root, _ = pipeline
        assert run("detect", root / "sim" / "waterfall.dfwf", root / "trk", "--threshold-hz", 0,
                   "--out", tmp_path / "d") != 0

    def test_not_a_track_dir(self, pipeline, tmp_path):
        root, _ = pipeline
        assert run("detect", root / "sim" / "waterfall.dfwf", tmp_path, "--threshold-hz", 2.7,
                   "--out", tmp_path / "d") != 0

    def test_calibration_samples(self, pipeline, tmp_path):
        root, _ = pipeline
        with open(tmp_path / "samples.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["lane", "centroid_hz"])
            for c in (3.0, 3.2, 3.4):
                wr.writerow(["near", c])
            for c in (2.0, 2.2, 2.4):
                wr.writerow(["far", c])
        assert run("detect", root / "sim" / "waterfall.dfwf", root / "trk", "--calibration",
                   tmp_path / "samples.csv", "--out", tmp_path / "d") == 0
        assert json.loads((tmp_path / "d" / "threshold.json").read_text())["value"] == pytest.approx(2.7)


class TestCalibrate:
    def test_from_truth_without_near_labels(self, pipeline, tmp_path, capsys):
        root, _ = pipeline
        # only vehicle b keeps one lane, so there are no near samples
        assert run("calibrate", root / "sim" / "waterfall.dfwf", root / "trk", "--truth", root / "sim",
                   "--out", tmp_path / "c") != 0
        assert "error" in capsys.readouterr().err

    def test_from_labels(self, pipeline, tmp_path):
        root, _ = pipeline
        (tmp_path / "labels.csv").write_text("track_id,lane\nb,far\n")
        assert run("calibrate", root / "sim" / "waterfall.dfwf", root / "trk", "--labels", tmp_path / "labels.csv",
                   "--out", tmp_path / "c") != 0
        rows = list(csv.DictReader(open(tmp_path / "c" / "centroid_samples.csv")))
        assert [r["track_id"] for r in rows] == ["b"]
        assert float(rows[0]["centroid_hz"]) < 2.7

    def test_needs_inputs(self, tmp_path):
        assert run("calibrate", "--out", tmp_path / "c") != 0


class TestEval:
    def test_perfect_noiseless(self, pipeline):
        root, codes = pipeline
        assert codes[3] == 0
        m = json.loads((root / "ev" / "metrics.json").read_text())
        assert m["tracking"]["overall"]["accuracy"] == 1.0
        assert m["lane_change"]["pooled"]["tpr"] == 1.0
        assert m["lane_change"]["pooled"]["fpr"] == 0.0
        assert (root / "ev" / "metrics.txt").is_file()

    def test_empty_events(self, pipeline, tmp_path, capsys):
        root, _ = pipeline
        (tmp_path / "none.jsonl").write_text("")
        assert run("eval", "--truth", root / "sim", "--events", tmp_path / "none.jsonl", "--out", tmp_path / "e") == 0
        m = json.loads((tmp_path / "e" / "metrics.json").read_text())
        assert m["lane_change"]["pooled"]["tpr"] == 0.0
        assert m["lane_change"]["pooled"]["fpr"] is None
        assert "N/A" in capsys.readouterr().out

    def test_missing_truth(self, pipeline, tmp_path, capsys):
        root, _ = pipeline
        assert run("eval", "--truth", tmp_path / "nope", "--tracks", root / "trk", "--out", tmp_path / "e") != 0
        assert "ground truth" in capsys.readouterr().err
