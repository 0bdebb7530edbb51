"""Run configuration: a plain ``key = value`` file plus command-line overrides.

Precedence is flag > file > built-in default. The file may also set any
tracker parameter as ``tracker.<name> = value``. Blank lines and ``#``
comments are ignored.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, Optional, Tuple

from .lanes import (
    DEFAULT_CHANNEL_HALFWIDTH,
    DEFAULT_DEBOUNCE,
    DEFAULT_HOP_S,
    DEFAULT_WINDOW_S,
    LaneAnalysisError,
    load_threshold,
)
from .pipeline import LaneParams
from .tracker import TrackerConfig, TrackingError

CONFIG_ENV = "DFOS_TRACE_CONFIG"
EFFECTIVE_CONFIG_FILE = "effective_config.txt"


class ConfigError(ValueError):
    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path, self.line = path, line
        where = f"{path}:{line}: " if path and line else (f"{path}: " if path else "")
        super().__init__(where + message)


@dataclass
class RunConfig:
    seed: Optional[int] = None
    window_s: float = 10.0
    update_s: float = 1.0
    v_min: float = 0.0
    v_max: float = 160.0
    gate_tolerance: float = 0.5
    max_coast_s: float = 5.0
    k_vehicles: int = 1
    threshold_hz: Optional[float] = None
    threshold_file: Optional[str] = None
    lane_window_s: float = DEFAULT_WINDOW_S
    lane_hop_s: float = DEFAULT_HOP_S
    debounce: int = DEFAULT_DEBOUNCE
    channel_halfwidth: int = DEFAULT_CHANNEL_HALFWIDTH
    guard_channels: float = 8.0
    min_count: int = 5
    kp_bin_km: float = 0.1
    time_bin_s: float = 300.0
    tol_s: float = 3.0
    match_window_s: float = 10.0
    match_kp_km: float = 0.2
    workers: int = 1
    out: str = "out"
    tracker_extra: Dict[str, str] = field(default_factory=dict)

    def tracker_config(self) -> TrackerConfig:
        known = {f.name: f.type for f in fields(TrackerConfig)}
        extra = {}
        for key, raw in self.tracker_extra.items():
            if key not in known:
                raise ConfigError(f"unknown tracker parameter '{key}'")
            extra[key] = _convert(raw, known[key], f"tracker.{key}")
        base = dict(window_length=self.window_s, update_interval=self.update_s, v_min=self.v_min,
                    v_max=self.v_max, gate_tolerance=self.gate_tolerance, max_coast=self.max_coast_s,
                    k_vehicles=self.k_vehicles)
        base.update(extra)
        try:
            return TrackerConfig(**base)
        except TrackingError as exc:
            raise ConfigError(str(exc)) from None

    def lane_params(self) -> LaneParams:
        return LaneParams(self.lane_window_s, self.lane_hop_s, self.debounce, self.channel_halfwidth,
                          self.guard_channels)

    def validate(self) -> "RunConfig":
        self.tracker_config()
        if not (self.lane_window_s > 0 and self.lane_hop_s > 0):
            raise ConfigError("lane_window_s and lane_hop_s must be > 0")
        if self.debounce < 1 or self.channel_halfwidth < 0 or self.guard_channels < 0:
            raise ConfigError("need debounce >= 1, channel_halfwidth >= 0, guard_channels >= 0")
        if self.min_count < 1:
            raise ConfigError("min_count must be >= 1")
        if not (self.kp_bin_km > 0 and self.time_bin_s > 0):
            raise ConfigError("kp_bin_km and time_bin_s must be > 0")
        if not (self.tol_s > 0 and self.match_window_s > 0 and self.match_kp_km > 0):
            raise ConfigError("tol_s, match_window_s and match_kp_km must be > 0")
        if self.threshold_hz is not None and not self.threshold_hz > 0:
            raise ConfigError(f"threshold_hz must be > 0, got {self.threshold_hz}")
        if self.threshold_file is not None:
            if not Path(self.threshold_file).is_file():
                raise ConfigError(f"threshold_file not found: {self.threshold_file}")
            try:
                load_threshold(self.threshold_file)
            except (LaneAnalysisError, ValueError) as exc:
                raise ConfigError(f"{self.threshold_file}: {exc}") from None
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "tracker_extra":
                continue
            v = getattr(self, f.name)
            if v is not None:
                lines.append(f"{f.name} = {v}")
        tc = self.tracker_config()
        for f in fields(TrackerConfig):
            lines.append(f"tracker.{f.name} = {getattr(tc, f.name)}")
        return "\n".join(lines) + "\n"


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(raw: str, typ, key: str):
    typ = str(typ)
    try:
        if "int" in typ:
            return int(raw)
        if "float" in typ:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    return raw


def parse_config_text(text: str, path: str = "<config>") -> Tuple[Dict[str, object], Dict[str, str]]:
    """(RunConfig values, tracker extras) from ``key = value`` text."""
    values: Dict[str, object] = {}
    extra: Dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", path, n)
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key.startswith("tracker."):
            extra[key[len("tracker."):]] = value
        elif key in _TYPES and key != "tracker_extra":
            try:
                values[key] = _convert(value, _TYPES[key], key)
            except ConfigError as exc:
                raise ConfigError(str(exc), path, n) from None
        else:
            raise ConfigError(f"unknown key '{key}'", path, n)
    return values, extra


def config_path(explicit: Optional[str]) -> Optional[str]:
    """--config wins; otherwise the DFOS_TRACE_CONFIG environment variable."""
    return explicit or os.environ.get(CONFIG_ENV) or None


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, object]] = None) -> RunConfig:
    """Defaults, then the file at ``path`` (if any), then non-None ``overrides``."""
    values: Dict[str, object] = {}
    extra: Dict[str, str] = {}
    if path:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", str(p)) from None
        values, extra = parse_config_text(text, str(p))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    cfg = dataclasses.replace(RunConfig(), **values)
    cfg.tracker_extra = extra
    return cfg.validate()


def write_effective_config(cfg: RunConfig, out_dir) -> Path:
    p = Path(out_dir) / EFFECTIVE_CONFIG_FILE
    p.write_text(cfg.to_text())
    return p

