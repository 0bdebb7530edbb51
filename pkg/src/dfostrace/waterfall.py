"""
Waterfall data model for distributed fiber-optic sensing (DFOS) recordings.

A waterfall is a time x channel grid of rectified vibration intensity plus the
sensor geometry needed to map channels to highway kilometer-posts (KP).

load_waterfall() / save_waterfall(): binary ("DFWF") and CSV+sidecar formats.
slice_waterfall(): sub-window extraction with geometry bookkeeping.
channel_to_kp() / kp_to_channel(): coordinate conversions.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Union

import numpy as np

PathLike = Union[str, Path]

MAGIC = b"DFWF"
FORMAT_VERSION = 1
# magic, version, rows, cols, temporal_res, spatial_res, origin_kp, kp_dir, start_time
_HEADER = struct.Struct("<4sHQQdddbd")

DEFAULT_SPATIAL_RESOLUTION = 5.0
DEFAULT_TEMPORAL_RESOLUTION = 0.1

_SIDECAR_KEYS = (
    "temporal_resolution_s",
    "spatial_resolution_m",
    "origin_kp",
    "kp_direction",
    "start_time_s",
)


class WaterfallError(ValueError):
    """Raised for malformed waterfall files or invalid waterfall contents."""


@dataclass(frozen=True)
class SensorGeometry:
    """Fiber layout: resolution, channel count and KP mapping.

    Attributes:
        spatial_resolution: meters per channel.
        temporal_resolution: seconds per time sample.
        origin_kp: kilometer-post of channel 0 (km).
        channel_count: number of channels.
        kp_direction: +1 if KP grows with channel index, -1 otherwise.
    """

    spatial_resolution: float = DEFAULT_SPATIAL_RESOLUTION
    temporal_resolution: float = DEFAULT_TEMPORAL_RESOLUTION
    origin_kp: float = 0.0
    channel_count: int = 1
    kp_direction: int = 1

    def __post_init__(self):
        if not (self.spatial_resolution > 0 and math.isfinite(self.spatial_resolution)):
            raise WaterfallError(f"spatial_resolution must be positive, got {self.spatial_resolution}")
        if not (self.temporal_resolution > 0 and math.isfinite(self.temporal_resolution)):
            raise WaterfallError(f"temporal_resolution must be positive, got {self.temporal_resolution}")
        if int(self.channel_count) != self.channel_count or self.channel_count < 1:
            raise WaterfallError(f"channel_count must be a positive integer, got {self.channel_count}")
        if self.kp_direction not in (1, -1):
            raise WaterfallError(f"kp_direction must be +1 or -1, got {self.kp_direction}")
        if not math.isfinite(self.origin_kp):
            raise WaterfallError("origin_kp must be finite")

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.temporal_resolution

    @property
    def end_kp(self) -> float:
        """KP of the last channel."""
        return channel_to_kp(self, self.channel_count - 1)

    @property
    def kp_range(self) -> tuple[float, float]:
        a, b = self.origin_kp, self.end_kp
        return (min(a, b), max(a, b))

    def channels_per_sample(self, speed_kmh: float) -> float:
        """Channel advance per time sample at the given speed."""
        return speed_kmh / 3.6 * self.temporal_resolution / self.spatial_resolution

    def speed_from_slope(self, slope: float) -> float:
        """km/h for a slope in channels per sample."""
        return abs(slope) * self.spatial_resolution / self.temporal_resolution * 3.6


@dataclass(frozen=True)
class WindowSelector:
    """Half-open window: times [t0, t1) in seconds, channels [c0, c1)."""

    t0: float
    t1: float
    c0: int
    c1: int

    def __post_init__(self):
        if not self.t0 < self.t1:
            raise WaterfallError(f"window needs t0 < t1, got [{self.t0}, {self.t1})")
        if not 0 <= self.c0 < self.c1:
            raise WaterfallError(f"window needs 0 <= c0 < c1, got [{self.c0}, {self.c1})")


@dataclass(frozen=True, eq=False)
class Waterfall:
    """Rectified vibration intensities, rows = time samples, columns = channels.

    ``start_time`` is the scene-relative time (s) of row 0.
    """

    geometry: SensorGeometry
    start_time: float
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 2:
            raise WaterfallError(f"samples must be 2-D, got shape {samples.shape}")
        if samples.shape[1] != self.geometry.channel_count:
            raise WaterfallError(
                f"column count {samples.shape[1]} != channel_count {self.geometry.channel_count}"
            )
        if not np.all(np.isfinite(samples)):
            raise WaterfallError("samples contain non-finite values")
        if samples.size and samples.min() < 0:
            raise WaterfallError("samples must be non-negative")
        if samples.dtype != np.float32:
            samples = samples.astype(np.float32)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def n_times(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_times * self.geometry.temporal_resolution

    @property
    def end_time(self) -> float:
        """Exclusive end time (s)."""
        return self.start_time + self.duration

    def time_of(self, row) -> float:
        return self.start_time + row * self.geometry.temporal_resolution

    def row_of(self, t: float) -> int:
        """Row index for scene time ``t`` (nearest sample)."""
        return int(round((t - self.start_time) / self.geometry.temporal_resolution))

    def __eq__(self, other):
        if not isinstance(other, Waterfall):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.start_time == other.start_time
            and self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples)
        )


def channel_to_kp(g: SensorGeometry, channel) -> float:
    if not 0 <= channel < g.channel_count:
        raise WaterfallError(f"channel {channel} outside [0, {g.channel_count})")
    return g.origin_kp + g.kp_direction * channel * g.spatial_resolution / 1000.0


def channel_to_kp_unchecked(g: SensorGeometry, channel):
    """Vectorised conversion without bounds checking (fractional channels allowed)."""
    return g.origin_kp + g.kp_direction * np.asarray(channel, dtype=float) * g.spatial_resolution / 1000.0


def kp_to_channel_float(g: SensorGeometry, kp):
    return (np.asarray(kp, dtype=float) - g.origin_kp) * 1000.0 / (g.kp_direction * g.spatial_resolution)


def kp_to_channel(g: SensorGeometry, kp: float) -> int:
    """Nearest channel for ``kp``; raises if it falls outside the fiber."""
    c = int(math.floor(float(kp_to_channel_float(g, kp)) + 0.5))
    if not 0 <= c < g.channel_count:
        raise WaterfallError(f"kp {kp} maps to channel {c}, outside [0, {g.channel_count})")
    return c


def channels_for_span(spatial_resolution: float, kp_start: float, kp_end: float) -> int:
    """Channels needed to cover ``kp_start``..``kp_end`` (both ends on a channel)."""
    return int(round(abs(kp_end - kp_start) * 1000.0 / spatial_resolution))


def slice_waterfall(w: Waterfall, sel: WindowSelector) -> Waterfall:
    """Cut out the rows within [t0, t1) and channels [c0, c1).

    Rows are selected by sample time, so a 10 s selector at 0.1 s resolution
    gives 100 rows. The returned geometry has origin_kp moved to channel c0
    and start_time moved to the first kept row.
    """
    g = w.geometry
    if sel.c1 > g.channel_count:
        raise WaterfallError(f"selector channels [{sel.c0}, {sel.c1}) exceed channel_count {g.channel_count}")
    r0 = _row_ceil(w, sel.t0)
    r1 = _row_ceil(w, sel.t1)
    if r0 < 0 or r1 > w.n_times or r0 >= r1:
        raise WaterfallError(
            f"selector times [{sel.t0}, {sel.t1}) outside waterfall [{w.start_time}, {w.end_time})"
        )
    geometry = replace(g, origin_kp=channel_to_kp(g, sel.c0), channel_count=sel.c1 - sel.c0)
    return Waterfall(geometry, w.time_of(r0), np.array(w.samples[r0:r1, sel.c0:sel.c1]))


def _row_ceil(w: Waterfall, t: float) -> int:
    # first row whose time is >= t, tolerant to float noise in t / dt
    x = (t - w.start_time) / w.geometry.temporal_resolution
    r = math.ceil(x - 1e-9)
    return int(r)


def compose_selectors(w: Waterfall, a: WindowSelector, b: WindowSelector) -> WindowSelector:
    """Selector on ``w`` equivalent to applying ``a`` then ``b`` (b in a's frame)."""
    inner_start = w.time_of(_row_ceil(w, a.t0))
    t0 = max(b.t0, inner_start)
    t1 = min(b.t1, a.t1)
    return WindowSelector(t0, t1, a.c0 + b.c0, a.c0 + b.c1)


# --------------------------------------------------------------------------- I/O


def save_waterfall(w: Waterfall, path: PathLike) -> None:
    """Write ``w``; ``.csv`` paths use the CSV + sidecar format, anything else binary."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        _save_csv(w, path)
        return
    g = w.geometry
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        w.n_times,
        w.n_channels,
        g.temporal_resolution,
        g.spatial_resolution,
        g.origin_kp,
        g.kp_direction,
        w.start_time,
    )
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(w.samples, dtype="<f4").tobytes())
    except OSError as exc:
        raise WaterfallError(f"cannot write waterfall to {path}: {exc}") from exc


def load_waterfall(path: PathLike) -> Waterfall:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _load_csv(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise WaterfallError(f"cannot read waterfall {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise WaterfallError(f"{path}: header truncated ({len(raw)} bytes)")
    magic, version, rows, cols, dt, dx, origin_kp, kp_dir, start_time = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise WaterfallError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise WaterfallError(f"{path}: unsupported format version {version}")
    expected = rows * cols * 4
    payload = len(raw) - _HEADER.size
    if payload != expected:
        raise WaterfallError(
            f"{path}: dimension mismatch, header rows={rows} cols={cols} needs {expected} bytes, found {payload}"
        )
    geometry = SensorGeometry(dx, dt, origin_kp, int(cols), int(kp_dir))
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, cols).astype(np.float32)
    bad = ~np.isfinite(data) | (data < 0)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise WaterfallError(f"{path}: invalid sample {data[r, c]} at row {r}, col {c}")
    return Waterfall(geometry, start_time, data)


def sidecar_path(csv_path: PathLike) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_suffix(".meta")


def _save_csv(w: Waterfall, path: Path) -> None:
    g = w.geometry
    meta = {
        "temporal_resolution_s": repr(g.temporal_resolution),
        "spatial_resolution_m": repr(g.spatial_resolution),
        "origin_kp": repr(g.origin_kp),
        "kp_direction": str(g.kp_direction),
        "start_time_s": repr(w.start_time),
    }
    try:
        # float32 values need 9 significant digits to round-trip
        np.savetxt(path, w.samples, delimiter=",", fmt="%.9g")
        sidecar_path(path).write_text("".join(f"{k}={v}\n" for k, v in meta.items()))
    except OSError as exc:
        raise WaterfallError(f"cannot write waterfall to {path}: {exc}") from exc


def _load_csv(path: Path) -> Waterfall:
    meta_file = sidecar_path(path)
    try:
        meta_lines = meta_file.read_text().splitlines()
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise WaterfallError(f"cannot read waterfall {path}: {exc}") from exc
    meta = {}
    for n, line in enumerate(meta_lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise WaterfallError(f"{meta_file}:{n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        meta[k.strip()] = v.strip()
    missing = [k for k in _SIDECAR_KEYS if k not in meta]
    if missing:
        raise WaterfallError(f"{meta_file}: missing keys {', '.join(missing)}")
    try:
        dt = float(meta["temporal_resolution_s"])
        dx = float(meta["spatial_resolution_m"])
        origin_kp = float(meta["origin_kp"])
        kp_dir = int(meta["kp_direction"])
        start_time = float(meta["start_time_s"])
    except ValueError as exc:
        raise WaterfallError(f"{meta_file}: malformed value ({exc})") from exc
    cols_declared = int(meta["cols"]) if "cols" in meta else None

    rows = []
    width = cols_declared
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            values = [float(v) for v in line.split(",")]
        except ValueError as exc:
            raise WaterfallError(f"{path}:{n}: malformed value ({exc})") from exc
        if width is None:
            width = len(values)
        if len(values) != width:
            raise WaterfallError(f"{path}:{n}: dimension mismatch, expected {width} values, found {len(values)}")
        for c, v in enumerate(values):
            if not math.isfinite(v) or v < 0:
                raise WaterfallError(f"{path}:{n}: invalid sample {v} at column {c}")
        rows.append(values)
    if not rows:
        raise WaterfallError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float32)
    geometry = SensorGeometry(dx, dt, origin_kp, data.shape[1], kp_dir)
    return Waterfall(geometry, start_time, data)
