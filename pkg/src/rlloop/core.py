"""Shared slice types, configuration and the action/observation scaling."""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import NamedTuple


class ConfigError(ValueError):
    """Invalid configuration values or config file contents."""


class ContractViolation(ValueError):
    """An operation was called with inputs outside its contract."""


class FaultError(RuntimeError):
    """Non-finite numbers or a broken environment during a run."""


@dataclass(frozen=True)
class SliceConfig:
    cpu_min_mc: float = 500.0
    cpu_max_mc: float = 4000.0
    cpu_grid_mc: float = 500.0
    snap_to_grid: bool = False
    traffic_mean: float = 5.0
    traffic_std: float = 3.0
    session_len_s: int = 1
    per_ue_demand_mc: float = 280.0
    per_ue_target_rate_mbps: float = 20.0
    degradation_exponent: float = 3.0
    usage_noise_rel: float = 0.02
    qos_threshold_mbps: float = 1.0
    load_norm_max_mc: float = 4000.0
    traffic_norm_max: float = 20.0
    control_period_s: float = 1.0

    def __post_init__(self):
        if not 0 < self.cpu_min_mc <= self.cpu_max_mc:
            raise ConfigError(
                f"need 0 < cpu_min_mc <= cpu_max_mc, got {self.cpu_min_mc}, {self.cpu_max_mc}"
            )
        if self.load_norm_max_mc <= 0 or self.traffic_norm_max <= 0:
            raise ConfigError("normalization bounds must be positive")
        if self.qos_threshold_mbps <= 0:
            raise ConfigError("qos_threshold_mbps must be positive")
        if self.degradation_exponent < 1:
            raise ConfigError("degradation_exponent must be >= 1")
        if self.traffic_std < 0:
            raise ConfigError("traffic_std must be >= 0")
        if self.session_len_s < 1:
            raise ConfigError("session_len_s must be >= 1")
        if self.snap_to_grid and self.cpu_grid_mc <= 0:
            raise ConfigError("cpu_grid_mc must be positive when snapping")
        if self.usage_noise_rel < 0 or self.per_ue_demand_mc < 0:
            raise ConfigError("usage_noise_rel and per_ue_demand_mc must be >= 0")
        if self.control_period_s != 1.0:
            raise ConfigError("control_period_s is fixed at 1 second")

    def replace(self, **changes) -> SliceConfig:
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            else:
                value = repr(value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def parse_config(text: str, base: SliceConfig | None = None) -> SliceConfig:
    """Parse ``key=value`` lines. Blank lines and ``#`` comments are skipped.

    Keys missing from ``text`` keep the value from ``base`` (or the defaults).
    """
    types = {f.name: f.type for f in fields(SliceConfig)}
    changes = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        kind = types[key]
        try:
            if kind == "bool":
                changes[key] = _BOOL_WORDS[value.lower()]
            elif kind == "int":
                changes[key] = int(value)
            else:
                changes[key] = float(value)
        except (KeyError, ValueError):
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None
    return dataclasses.replace(base or SliceConfig(), **changes)


def load_config(path: str | Path) -> SliceConfig:
    return parse_config(Path(path).read_text())


CALIBRATED_CONFIG_PATH = Path(__file__).with_name("data") / "calibrated.cfg"


def calibrated_config() -> SliceConfig:
    """Defaults with the traffic/degradation constants found by ``calibrate``."""
    return load_config(CALIBRATED_CONFIG_PATH)


@dataclass
class KpiSample:
    """One control period of logged slice state."""

    step: int
    active_users: int
    cpu_usage_mc: float
    throughput_mbps: float
    allocation_mc: float
    reward: float | None = None


class Observation(NamedTuple):
    traffic_norm: float
    cpu_usage_norm: float


def clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


def map_action(a: float, cfg: SliceConfig) -> float:
    """Normalized action in [0, 1] to a CPU limit in millicores."""
    a = clamp(float(a), 0.0, 1.0)
    mc = clamp(a * cfg.load_norm_max_mc, cfg.cpu_min_mc, cfg.cpu_max_mc)
    if cfg.snap_to_grid:
        # round half up so that e.g. 2250 -> 2500 regardless of float parity rules
        mc = math.floor(mc / cfg.cpu_grid_mc + 0.5) * cfg.cpu_grid_mc
        mc = clamp(mc, cfg.cpu_min_mc, cfg.cpu_max_mc)
    return mc


def action_for_allocation(mc: float, cfg: SliceConfig) -> float:
    """Inverse of :func:`map_action` on its range."""
    return clamp(mc / cfg.load_norm_max_mc, 0.0, 1.0)


def normalize_observation(users: float, usage_mc: float, cfg: SliceConfig) -> Observation:
    return Observation(
        clamp(users / cfg.traffic_norm_max, 0.0, 1.0),
        clamp(usage_mc / cfg.load_norm_max_mc, 0.0, 1.0),
    )
