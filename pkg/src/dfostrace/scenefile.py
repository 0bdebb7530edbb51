"""Scene specification files and ground-truth CSV tables.

A scene file is INI-style: one ``[scene]`` section plus one
``[vehicle.<id>]`` section per vehicle. Example::

    [scene]
    spatial_resolution_m = 5
    temporal_resolution_s = 0.1
    origin_kp = 8.3
    length_km = 2.0            # or: channels = 401
    duration_s = 120
    noise_sigma = 1.0
    rng_seed = 7
    checkpoints = 8.4, 10.2
    low_snr = 9.0:9.3:0.4      # kp_lo:kp_hi:attenuation, comma separated

    [vehicle.a]
    entry_time_s = 2
    entry_kp = 8.3
    speeds = 0:100, 40:90      # offset_s:km/h, piecewise constant
    lanes = 2:near, 30:far     # time_s:lane transitions
    class = small

Diagnostics carry the file name and line of the offending key.
"""

from __future__ import annotations

import configparser
import csv
import math
import re
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .simulator import (
    CheckpointRecord,
    GroundTruth,
    Lane,
    LaneChange,
    LaneModel,
    SceneError,
    SceneSpec,
    VehicleClass,
    VehicleSpec,
    default_lane_models,
)
from .waterfall import DEFAULT_SPATIAL_RESOLUTION, DEFAULT_TEMPORAL_RESOLUTION, SensorGeometry, WaterfallError

TRACE_FILE = "trace.csv"
LANE_CHANGES_FILE = "lane_changes.csv"
CHECKPOINTS_FILE = "checkpoints.csv"

TRACE_COLUMNS = ["vehicle_id", "time_s", "kp", "lane"]
LANE_CHANGE_COLUMNS = ["vehicle_id", "time_s", "kp", "from_lane", "to_lane"]
CHECKPOINT_COLUMNS = ["vehicle_id", "kp", "time_s", "vehicle_class"]

SCENE_KEYS = {
    "spatial_resolution_m", "temporal_resolution_s", "origin_kp", "kp_direction", "channels", "length_km",
    "duration_s", "noise_sigma", "rng_seed", "checkpoints", "low_snr", "kernel_sigma", "modulation_depth",
    "v_max", "start_time_s", "near_gain", "far_gain", "near_carrier_hz", "far_carrier_hz",
}
VEHICLE_KEYS = {
    "entry_time_s", "entry_kp", "speeds", "speed_kmh", "lanes", "lane", "class", "direction",
    "carrier_offset_hz", "dropouts",
}


class SceneFileError(ValueError):
    def __init__(self, message: str, path: str = "<scene>", line: Optional[int] = None, field: str = ""):
        self.path = path
        self.line = line
        self.field = field
        where = f"{path}:{line}" if line else path
        super().__init__(f"{where}: {message}")


def _key_lines(text: str) -> Dict[Tuple[str, str], int]:
    """(section, key) -> 1-based line number, plus (section, '') for headers."""
    lines = {}
    section = ""
    for n, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            lines[(section, "")] = n
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section:
            lines.setdefault((section, m.group(1).strip().lower()), n)
    return lines


class _Reader:
    def __init__(self, cp: configparser.ConfigParser, lines, path: str):
        self.cp, self.lines, self.path = cp, lines, path

    def fail(self, section: str, key: str, message: str):
        line = self.lines.get((section, key)) or self.lines.get((section, ""))
        raise SceneFileError(f"[{section}] {key}: {message}" if key else f"[{section}] {message}",
                             self.path, line, key)

    def raw(self, section: str, key: str, default=None):
        value = self.cp.get(section, key, fallback=None)
        if value is None:
            if default is None:
                self.fail(section, "", f"missing required key '{key}'")
            return default
        return value.split("#")[0].strip()

    def number(self, section: str, key: str, default=None, cast=float):
        value = self.raw(section, key, None if default is None else str(default))
        try:
            out = cast(value)
        except ValueError:
            self.fail(section, key, f"expected a number, got {value!r}")
        if isinstance(out, float) and not math.isfinite(out):
            self.fail(section, key, f"must be finite, got {value!r}")
        return out

    def pairs(self, section: str, key: str, default=None, n: int = 2) -> List[Tuple[str, ...]]:
        value = self.raw(section, key, default)
        out = []
        for item in filter(None, (p.strip() for p in value.split(","))):
            parts = [x.strip() for x in item.split(":")]
            if len(parts) != n:
                self.fail(section, key, f"expected {n} ':'-separated fields in {item!r}")
            out.append(tuple(parts))
        return out


def parse_scene_text(text: str, path: str = "<scene>") -> SceneSpec:
    """Parse and validate a scene file's text into a :class:`SceneSpec`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise SceneFileError(str(exc).splitlines()[0], path, line) from None
    lines = _key_lines(text)
    r = _Reader(cp, lines, path)
    if not cp.has_section("scene"):
        raise SceneFileError("missing [scene] section", path, 1)

    for key in cp.options("scene"):
        if key not in SCENE_KEYS:
            r.fail("scene", key, "unknown key")
    dx = r.number("scene", "spatial_resolution_m", DEFAULT_SPATIAL_RESOLUTION)
    dt = r.number("scene", "temporal_resolution_s", DEFAULT_TEMPORAL_RESOLUTION)
    origin = r.number("scene", "origin_kp")
    kp_dir = r.number("scene", "kp_direction", 1, int)
    if cp.has_option("scene", "channels"):
        channels = r.number("scene", "channels", cast=int)
    elif cp.has_option("scene", "length_km"):
        length = r.number("scene", "length_km")
        channels = int(round(length * 1000.0 / dx)) + 1 if dx > 0 else 0
    else:
        r.fail("scene", "", "one of 'channels' or 'length_km' is required")
    try:
        geometry = SensorGeometry(dx, dt, origin, channels, kp_dir)
    except WaterfallError as exc:
        r.fail("scene", "", str(exc))

    checkpoints = []
    if cp.has_option("scene", "checkpoints"):
        for item in filter(None, (x.strip() for x in r.raw("scene", "checkpoints").split(","))):
            try:
                checkpoints.append(float(item))
            except ValueError:
                r.fail("scene", "checkpoints", f"expected a kp, got {item!r}")
    low_snr = []
    for lo, hi, att in r.pairs("scene", "low_snr", "", 3):
        try:
            low_snr.append((float(lo), float(hi), float(att)))
        except ValueError:
            r.fail("scene", "low_snr", f"expected numbers in {lo}:{hi}:{att}")

    near_d, far_d = default_lane_models()
    lane_models = (
        LaneModel(Lane.NEAR, r.number("scene", "near_gain", near_d.amplitude_gain),
                  r.number("scene", "near_carrier_hz", near_d.carrier_frequency)),
        LaneModel(Lane.FAR, r.number("scene", "far_gain", far_d.amplitude_gain),
                  r.number("scene", "far_carrier_hz", far_d.carrier_frequency)),
    )

    vehicles = []
    for section in cp.sections():
        if section == "scene":
            continue
        if not section.startswith("vehicle."):
            r.fail(section, "", "unknown section (expected [scene] or [vehicle.<id>])")
        vehicles.append(_parse_vehicle(r, section))

    spec = SceneSpec(
        geometry=geometry,
        duration=r.number("scene", "duration_s"),
        vehicles=vehicles,
        noise_sigma=r.number("scene", "noise_sigma", 0.0),
        low_snr_sections=low_snr,
        rng_seed=r.number("scene", "rng_seed", 0, int),
        checkpoints=checkpoints,
        kernel_sigma=r.number("scene", "kernel_sigma", 3.0),
        modulation_depth=r.number("scene", "modulation_depth", 0.5),
        v_max=r.number("scene", "v_max", 160.0),
        lane_models=lane_models,
        start_time=r.number("scene", "start_time_s", 0.0),
    )
    try:
        spec.validate()
    except (SceneError, ValueError) as exc:
        field_name = getattr(exc, "field_name", "") or ""
        vid = getattr(exc, "vehicle", None)
        section = f"vehicle.{vid}" if vid else "scene"
        key = _field_key(r, section, field_name)
        r.fail(section, key, str(exc))
    return spec


def _field_key(r: _Reader, section: str, field_name: str) -> str:
    aliases = {"speeds": ("speeds", "speed_kmh"), "lanes": ("lanes", "lane"), "low_snr": ("low_snr",),
               "duration_s": ("duration_s",)}
    for key in aliases.get(field_name, (field_name,)):
        if r.cp.has_option(section, key):
            return key
    return field_name


def _parse_vehicle(r: _Reader, section: str) -> VehicleSpec:
    vid = section.split(".", 1)[1].strip()
    if not vid:
        r.fail(section, "", "vehicle id is empty")
    for key in r.cp.options(section):
        if key not in VEHICLE_KEYS:
            r.fail(section, key, "unknown key")
    entry_time = r.number(section, "entry_time_s", 0.0)
    entry_kp = r.number(section, "entry_kp")

    if r.cp.has_option(section, "speeds"):
        speeds = []
        for o, v in r.pairs(section, "speeds"):
            try:
                speeds.append((float(o), float(v)))
            except ValueError:
                r.fail(section, "speeds", f"expected offset_s:kmh numbers, got {o}:{v}")
    else:
        speeds = [(0.0, r.number(section, "speed_kmh"))]

    try:
        if r.cp.has_option(section, "lanes"):
            lanes = [(float(t), Lane.parse(ln)) for t, ln in r.pairs(section, "lanes")]
        else:
            lanes = [(entry_time, Lane.parse(r.raw(section, "lane", "near")))]
    except ValueError as exc:
        r.fail(section, "lanes" if r.cp.has_option(section, "lanes") else "lane", str(exc))
    try:
        cls = VehicleClass.parse(r.raw(section, "class", "small"))
    except ValueError as exc:
        r.fail(section, "class", str(exc))
    dropouts = []
    for a, b in r.pairs(section, "dropouts", ""):
        try:
            dropouts.append((float(a), float(b)))
        except ValueError:
            r.fail(section, "dropouts", f"expected t0:t1 numbers, got {a}:{b}")
    return VehicleSpec(vid, entry_time, entry_kp, speeds, lanes, cls,
                       direction=r.number(section, "direction", 1, int),
                       carrier_offset=r.number(section, "carrier_offset_hz", 0.0),
                       dropouts=dropouts)


def load_scene(path) -> SceneSpec:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise SceneFileError(f"cannot read scene file: {exc.strerror}", str(p)) from None
    return parse_scene_text(text, str(p))


def format_scene(spec: SceneSpec) -> str:
    """Scene file text that parses back to ``spec``."""
    g = spec.geometry
    near, far = spec.lane_models
    out = [
        "[scene]",
        f"spatial_resolution_m = {g.spatial_resolution!r}",
        f"temporal_resolution_s = {g.temporal_resolution!r}",
        f"origin_kp = {g.origin_kp!r}",
        f"kp_direction = {g.kp_direction}",
        f"channels = {g.channel_count}",
        f"duration_s = {spec.duration!r}",
        f"noise_sigma = {spec.noise_sigma!r}",
        f"rng_seed = {spec.rng_seed}",
        f"kernel_sigma = {spec.kernel_sigma!r}",
        f"modulation_depth = {spec.modulation_depth!r}",
        f"v_max = {spec.v_max!r}",
        f"start_time_s = {spec.start_time!r}",
        f"near_gain = {near.amplitude_gain!r}",
        f"far_gain = {far.amplitude_gain!r}",
        f"near_carrier_hz = {near.carrier_frequency!r}",
        f"far_carrier_hz = {far.carrier_frequency!r}",
    ]
    if spec.checkpoints:
        out.append("checkpoints = " + ", ".join(repr(float(c)) for c in spec.checkpoints))
    if spec.low_snr_sections:
        out.append("low_snr = " + ", ".join(f"{lo!r}:{hi!r}:{a!r}" for lo, hi, a in spec.low_snr_sections))
    for v in spec.vehicles:
        out += [
            "",
            f"[vehicle.{v.vehicle_id}]",
            f"entry_time_s = {v.entry_time!r}",
            f"entry_kp = {v.entry_kp!r}",
            "speeds = " + ", ".join(f"{float(o)!r}:{float(s)!r}" for o, s in v.speed_profile),
            "lanes = " + ", ".join(f"{float(t)!r}:{ln.value}" for t, ln in v.lane_timeline),
            f"class = {v.vehicle_class.value}",
            f"direction = {v.direction}",
            f"carrier_offset_hz = {v.carrier_offset!r}",
        ]
        if v.dropouts:
            out.append("dropouts = " + ", ".join(f"{a!r}:{b!r}" for a, b in v.dropouts))
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------- ground truth CSV


def write_ground_truth(gt: GroundTruth, out_dir) -> List[Path]:
    """Write trace.csv, lane_changes.csv and checkpoints.csv; returns the paths."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    trace_p, lc_p, ck_p = d / TRACE_FILE, d / LANE_CHANGES_FILE, d / CHECKPOINTS_FILE
    with open(trace_p, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(TRACE_COLUMNS)
        for vid in sorted(gt.positions):
            kp = gt.positions[vid]
            idx = np.nonzero(~np.isnan(kp))[0]
            lanes = gt.lane_of(vid, gt.times[idx])
            for i, ln in zip(idx, lanes):
                wr.writerow([vid, repr(float(gt.times[i])), repr(float(kp[i])), ln])
    with open(lc_p, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(LANE_CHANGE_COLUMNS)
        for c in gt.lane_changes:
            wr.writerow([c.vehicle_id, repr(c.time), repr(c.kp), c.from_lane.value, c.to_lane.value])
    with open(ck_p, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CHECKPOINT_COLUMNS)
        for c in sorted(gt.checkpoints, key=lambda c: (c.vehicle_id, c.time)):
            wr.writerow([c.vehicle_id, repr(float(c.kp)), repr(float(c.time)), c.vehicle_class.value])
    return [trace_p, lc_p, ck_p]


def _rows(path, required: List[str]) -> List[dict]:
    p = Path(path)
    try:
        fh = open(p, newline="")
    except OSError as exc:
        raise SceneFileError(f"cannot read: {exc.strerror}", str(p)) from None
    with fh:
        rd = csv.DictReader(fh)
        missing = [c for c in required if c not in (rd.fieldnames or [])]
        if missing:
            raise SceneFileError(f"missing columns {missing}", str(p), 1)
        return list(rd)


def read_checkpoints_csv(path) -> List[CheckpointRecord]:
    out = []
    for n, row in enumerate(_rows(path, ["vehicle_id", "kp", "time_s"]), 2):
        try:
            cls = VehicleClass.parse(row.get("vehicle_class") or "small")
            out.append(CheckpointRecord(float(row["kp"]), row["vehicle_id"], float(row["time_s"]), cls))
        except ValueError as exc:
            raise SceneFileError(f"bad checkpoint record ({exc})", str(path), n) from None
    return out


def read_lane_changes_csv(path) -> List[LaneChange]:
    out = []
    for n, row in enumerate(_rows(path, LANE_CHANGE_COLUMNS), 2):
        try:
            out.append(LaneChange(row["vehicle_id"], float(row["time_s"]), float(row["kp"]),
                                  Lane.parse(row["from_lane"]), Lane.parse(row["to_lane"])))
        except ValueError as exc:
            raise SceneFileError(f"bad lane-change record ({exc})", str(path), n) from None
    return out


def read_trace_csv(path) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """vehicle_id -> (times, kps) of the true trace."""
    acc: Dict[str, Tuple[list, list]] = {}
    for row in _rows(path, TRACE_COLUMNS):
        t, k = acc.setdefault(row["vehicle_id"], ([], []))
        t.append(float(row["time_s"]))
        k.append(float(row["kp"]))
    return {vid: (np.asarray(t), np.asarray(k)) for vid, (t, k) in acc.items()}


def starts_from_checkpoints(records: List[CheckpointRecord]) -> List[Tuple[str, float, float]]:
    """(vehicle_id, time, kp) of each vehicle's first checkpoint, the camera-surrogate seeds."""
    first: Dict[str, CheckpointRecord] = {}
    for c in records:
        if c.vehicle_id not in first or c.time < first[c.vehicle_id].time:
            first[c.vehicle_id] = c
    return [(vid, c.time, c.kp) for vid, c in sorted(first.items(), key=lambda kv: (kv[1].time, kv[0]))]
