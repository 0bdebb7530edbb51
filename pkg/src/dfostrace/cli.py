"""Command-line entry point: simulate, track, calibrate, detect, eval.

Each stage reads and writes plain files so stages can be rerun on their own::

    dfostrace simulate scene.ini --out sim
    dfostrace track sim/waterfall.dfwf sim/checkpoints.csv --out trk
    dfostrace calibrate sim/waterfall.dfwf trk --truth sim --out cal
    dfostrace detect sim/waterfall.dfwf trk --threshold-file cal/threshold.json --out det
    dfostrace eval --truth sim --tracks trk --events det/events.jsonl --out ev
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .abnormality import AbnormalityError, format_alert_table, write_alerts_jsonl
from .config import ConfigError, RunConfig, config_path, load_run_config, write_effective_config
from .evaluation import EvaluationError, MetricsReport, lane_change_metrics, tracking_accuracy
from .lanes import (
    CentroidThreshold,
    LaneAnalysisError,
    calibrate_threshold,
    load_threshold,
    read_events_csv,
    read_events_jsonl,
    save_threshold,
    track_centroid,
    write_events_csv,
    write_events_jsonl,
)
from .pipeline import detect_all, find_hotspots, track_all
from .scenefile import (
    CHECKPOINTS_FILE,
    LANE_CHANGES_FILE,
    TRACE_FILE,
    SceneFileError,
    load_scene,
    read_checkpoints_csv,
    read_lane_changes_csv,
    starts_from_checkpoints,
    write_ground_truth,
)
from .simulator import Lane, SceneError, render_scene
from .tracker import (
    TrackingError,
    TrackStatus,
    VehicleTrack,
    read_summary_csv,
    read_track_csv,
    summary_row,
    write_summary_csv,
    write_track_csv,
)
from .waterfall import SensorGeometry, Waterfall, WaterfallError, load_waterfall, save_waterfall

log = logging.getLogger("dfostrace")

WATERFALL_FILE = "waterfall.dfwf"
SUMMARY_FILE = "summary.csv"
TRACKS_META_FILE = "tracks_meta.json"
EVENTS_JSONL = "events.jsonl"
EVENTS_CSV = "events.csv"
ALERTS_JSONL = "alerts.jsonl"
THRESHOLD_FILE = "threshold.json"
SAMPLES_FILE = "centroid_samples.csv"
METRICS_JSON = "metrics.json"
METRICS_TXT = "metrics.txt"

# errors that end a command with a one-line diagnostic instead of a traceback
EXPECTED_ERRORS = (ConfigError, SceneFileError, SceneError, WaterfallError, TrackingError, LaneAnalysisError,
                   AbnormalityError, EvaluationError, OSError, ValueError)


class CommandError(Exception):
    pass


# --------------------------------------------------------------------------- helpers


def _safe_name(track_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", track_id) or "_"


def track_file_name(track_id: str) -> str:
    return f"track_{_safe_name(track_id)}.csv"


def read_starts(path) -> List[tuple]:
    """Seeds from a starts CSV (track_id, time_s, kp) or a checkpoints CSV.

    A checkpoints file seeds each vehicle at its first checkpoint.
    """
    p = Path(path)
    with open(p, newline="") as fh:
        rd = csv.DictReader(fh)
        cols = rd.fieldnames or []
        rows = list(rd)
    if "vehicle_id" in cols and "vehicle_class" in cols:
        return starts_from_checkpoints(read_checkpoints_csv(p))
    id_col = "track_id" if "track_id" in cols else "vehicle_id" if "vehicle_id" in cols else None
    if not {"time_s", "kp"} <= set(cols):
        if not cols and not rows:
            return []
        raise CommandError(f"{p}: starts file needs columns time_s, kp (and optionally track_id)")
    out = []
    for n, row in enumerate(rows, 2):
        try:
            tid = row[id_col] if id_col else str(n - 2)
            out.append((tid, float(row["time_s"]), float(row["kp"])))
        except ValueError:
            raise CommandError(f"{p}:{n}: bad start record {row}") from None
    return out


def save_tracks(tracks: Sequence[VehicleTrack], w: Waterfall, out: Path) -> None:
    g = w.geometry
    meta = {"start_time": w.start_time, "spatial_resolution": g.spatial_resolution,
            "temporal_resolution": g.temporal_resolution, "origin_kp": g.origin_kp,
            "channel_count": g.channel_count, "kp_direction": g.kp_direction,
            "tracks": {t.track_id: track_file_name(t.track_id) for t in tracks}}
    (out / TRACKS_META_FILE).write_text(json.dumps(meta, indent=2))
    for t in tracks:
        write_track_csv(t, out / track_file_name(t.track_id))
    write_summary_csv([summary_row(t) for t in tracks], out / SUMMARY_FILE)


def load_tracks(track_dir) -> List[VehicleTrack]:
    d = Path(track_dir)
    meta_p = d / TRACKS_META_FILE
    if not meta_p.is_file():
        raise CommandError(f"{d}: not a track directory (missing {TRACKS_META_FILE})")
    meta = json.loads(meta_p.read_text())
    g = SensorGeometry(meta["spatial_resolution"], meta["temporal_resolution"], meta["origin_kp"],
                       meta["channel_count"], meta["kp_direction"])
    tracks = []
    for row in read_summary_csv(d / SUMMARY_FILE):
        tid = row["track_id"]
        seed = (float(row["start_time_s"]), float(row["start_kp"]))
        tr = read_track_csv(d / meta["tracks"][tid], g, meta["start_time"], tid, seed=seed, status=row["status"])
        tr.message = row.get("message", "")
        tracks.append(tr)
    return tracks


def format_track_table(tracks: Sequence[VehicleTrack]) -> str:
    lines = [f"{'track':<10} {'start_s':>8} {'end_s':>8} {'speed':>7}  status"]
    for t in tracks:
        r = summary_row(t)
        end = float(r["end_time_s"]) if r["end_time_s"] else float("nan")
        lines.append(f"{t.track_id:<10} {float(r['start_time_s']):8.1f} {end:8.1f} {t.mean_speed:7.1f}  "
                     f"{t.status.value}{'  ' + t.message if t.message else ''}")
    return "\n".join(lines)


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> RunConfig:
    overrides = {
        "seed": args.seed, "window_s": args.window_s, "update_s": args.update_s,
        "threshold_hz": args.threshold_hz, "min_count": args.min_count, "kp_bin_km": args.kp_bin_km,
        "time_bin_s": args.time_bin_s, "out": args.out,
        "threshold_file": getattr(args, "threshold_file", None),
    }
    return load_run_config(config_path(args.config), overrides)


# --------------------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    cfg = _config(args)
    spec = load_scene(args.scene)
    if cfg.seed is not None:
        spec.rng_seed = cfg.seed
    w, gt = render_scene(spec)
    out = _out_dir(args, cfg)
    save_waterfall(w, out / WATERFALL_FILE)
    write_ground_truth(gt, out)
    print(f"simulated {len(spec.vehicles)} vehicles, {w.duration:.1f} s, {len(gt.lane_changes)} lane changes, "
          f"{len(gt.checkpoints)} checkpoint records -> {out}")
    return 0


def cmd_track(args) -> int:
    cfg = _config(args)
    w = load_waterfall(args.waterfall)
    seeds = read_starts(args.starts)
    out = _out_dir(args, cfg)
    write_effective_config(cfg, out)
    if not seeds:
        log.warning("starts file %s lists no seeds; nothing to track", args.starts)
    tracks = track_all(w, seeds, cfg.tracker_config(), workers=cfg.workers)
    save_tracks(tracks, w, out)
    print(format_track_table(tracks))
    counts: Dict[str, int] = {}
    for t in tracks:
        counts[t.status.value] = counts.get(t.status.value, 0) + 1
    print(f"{len(tracks)} tracks: " + ", ".join(f"{v} {k}" for k, v in sorted(counts.items())))
    return 0


def _threshold(args, cfg: RunConfig, out: Path) -> CentroidThreshold:
    if getattr(args, "calibration", None):
        th = threshold_from_samples(args.calibration)
        save_threshold(th, out / THRESHOLD_FILE)
        return th
    if cfg.threshold_hz is not None:
        return CentroidThreshold(cfg.threshold_hz)
    if cfg.threshold_file:
        return load_threshold(cfg.threshold_file)
    raise CommandError("no lane threshold: pass --threshold-hz, --threshold-file or --calibration")


def cmd_detect(args) -> int:
    cfg = _config(args)
    w = load_waterfall(args.waterfall)
    tracks = load_tracks(args.tracks)
    out = _out_dir(args, cfg)
    th = _threshold(args, cfg, out)
    write_effective_config(cfg, out)
    events = detect_all(w, tracks, th, cfg.lane_params())
    write_events_jsonl(events, out / EVENTS_JSONL)
    write_events_csv(events, out / EVENTS_CSV)
    alerts = find_hotspots(w, events, cfg.min_count, cfg.kp_bin_km, cfg.time_bin_s)
    write_alerts_jsonl(alerts, out / ALERTS_JSONL)
    print(f"threshold {th.value:.3f} Hz, {len(events)} lane-change events, {len(alerts)} alerts")
    print(format_alert_table(alerts))
    return 0


def threshold_from_samples(path) -> CentroidThreshold:
    """Threshold from a CSV of labeled centroid samples (lane, centroid_hz)."""
    near, far = [], []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if not {"lane", "centroid_hz"} <= set(rd.fieldnames or []):
            raise CommandError(f"{path}: calibration samples need columns lane, centroid_hz")
        for n, row in enumerate(rd, 2):
            try:
                (near if Lane.parse(row["lane"]) is Lane.NEAR else far).append(float(row["centroid_hz"]))
            except ValueError as exc:
                raise CommandError(f"{path}:{n}: {exc}") from None
    return calibrate_threshold(near, far)


def labels_from_truth(truth_dir) -> Dict[str, Lane]:
    """Lane of every vehicle that never changes lane in the ground-truth trace."""
    lanes: Dict[str, set] = {}
    with open(Path(truth_dir) / TRACE_FILE, newline="") as fh:
        for row in csv.DictReader(fh):
            lanes.setdefault(row["vehicle_id"], set()).add(row["lane"])
    return {vid: Lane.parse(next(iter(s))) for vid, s in lanes.items() if len(s) == 1}


def labels_from_csv(path) -> Dict[str, Lane]:
    with open(path, newline="") as fh:
        return {row["track_id"]: Lane.parse(row["lane"]) for row in csv.DictReader(fh)}


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    if args.samples:
        th = threshold_from_samples(args.samples)
    else:
        if not (args.waterfall and args.tracks and (args.labels or args.truth)):
            raise CommandError("calibrate needs --samples, or WATERFALL TRACKS with --labels or --truth")
        w = load_waterfall(args.waterfall)
        tracks = {t.track_id: t for t in load_tracks(args.tracks)}
        labels = labels_from_csv(args.labels) if args.labels else labels_from_truth(args.truth)
        lp = cfg.lane_params()
        rows = []
        for tid in sorted(labels):
            tr = tracks.get(tid)
            if tr is None or tr.status is TrackStatus.FAILED or not tr.trace:
                continue
            try:
                c = track_centroid(w, tr, lp.window_s, lp.hop_s, lp.channel_halfwidth)
            except LaneAnalysisError as exc:
                log.warning("skipping %s: %s", tid, exc)
                continue
            rows.append((tid, labels[tid].value, c))
        with open(out / SAMPLES_FILE, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["track_id", "lane", "centroid_hz"])
            for tid, lane, c in rows:
                wr.writerow([tid, lane, repr(c)])
        th = calibrate_threshold([c for _, l, c in rows if l == Lane.NEAR.value],
                                 [c for _, l, c in rows if l == Lane.FAR.value])
    save_threshold(th, out / THRESHOLD_FILE)
    print(f"threshold {th.value:.3f} Hz from {th.near_sample_count} near + {th.far_sample_count} far samples, "
          f"training misclassification {100 * th.misclassification:.1f}%")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    truth = Path(args.truth)
    if not truth.is_dir():
        raise CommandError(f"ground truth directory not found: {truth}")
    if not (args.tracks or args.events):
        raise CommandError("eval needs --tracks and/or --events")
    report = MetricsReport()
    if args.tracks:
        ck = truth / CHECKPOINTS_FILE
        if not ck.is_file():
            raise CommandError(f"missing ground truth {ck}")
        report = report.merge(tracking_accuracy(load_tracks(args.tracks), read_checkpoints_csv(ck), cfg.tol_s))
    if args.events:
        lc = truth / LANE_CHANGES_FILE
        if not lc.is_file():
            raise CommandError(f"missing ground truth {lc}")
        ev_path = Path(args.events)
        events = read_events_csv(ev_path) if ev_path.suffix == ".csv" else read_events_jsonl(ev_path)
        report = report.merge(lane_change_metrics(events, read_lane_changes_csv(lc), cfg.match_window_s,
                                                  cfg.match_kp_km))
    out = _out_dir(args, cfg)
    write_effective_config(cfg, out)
    (out / METRICS_JSON).write_text(report.to_json() + "\n")
    table = report.format_table()
    (out / METRICS_TXT).write_text(table + "\n")
    print(table)
    return 0


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file (fallback: $DFOS_TRACE_CONFIG)")
    common.add_argument("--seed", type=int, help="override the scene RNG seed")
    common.add_argument("--window-s", type=float, help="tracking window length (s)")
    common.add_argument("--update-s", type=float, help="tracking update interval (s)")
    common.add_argument("--threshold-hz", type=float, help="lane centroid threshold (Hz)")
    common.add_argument("--min-count", type=int, help="events per bin that raise an alert")
    common.add_argument("--kp-bin-km", type=float, help="histogram kp bin width (km)")
    common.add_argument("--time-bin-s", type=float, help="histogram time bin width (s)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="dfostrace", description="Vehicle tracking on fiber-sensing waterfalls.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="render a scene file to a waterfall and ground truth")
    p.add_argument("scene")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", parents=[common], help="track vehicles from seed positions")
    p.add_argument("waterfall")
    p.add_argument("starts", help="CSV of seeds (track_id,time_s,kp) or a checkpoints.csv")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("calibrate", parents=[common], help="fit the near/far centroid threshold")
    p.add_argument("waterfall", nargs="?")
    p.add_argument("tracks", nargs="?", help="track directory written by 'track'")
    p.add_argument("--labels", help="CSV of track_id,lane")
    p.add_argument("--truth", help="ground-truth directory; single-lane vehicles become labels")
    p.add_argument("--samples", help="CSV of lane,centroid_hz samples")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("detect", parents=[common], help="detect lane changes and abnormality hotspots")
    p.add_argument("waterfall")
    p.add_argument("tracks", help="track directory written by 'track'")
    p.add_argument("--threshold-file", help="threshold written by 'calibrate'")
    p.add_argument("--calibration", help="CSV of lane,centroid_hz samples to calibrate from first")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", parents=[common], help="score tracks and events against ground truth")
    p.add_argument("--truth", required=True, help="directory with checkpoints.csv and lane_changes.csv")
    p.add_argument("--tracks", help="track directory")
    p.add_argument("--events", help="events.jsonl or events.csv")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"dfostrace {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except EXPECTED_ERRORS as exc:
        if args.verbose:
            log.exception("command failed")
        print(f"dfostrace {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
