"""Scenario schema, YAML parsing/emission and validation.

Every field has a default; an empty file yields the reference 50-node
scenario. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Union

import yaml


class ConfigError(ValueError):
    def __init__(self, field_name: str, constraint: str):
        self.field = field_name
        self.constraint = constraint
        super().__init__(f"{field_name}: {constraint}")


@dataclass(frozen=True)
class TopologyConfig:
    node_count: int = 50
    area_m: tuple = (50.0, 50.0)
    comm_range_m: float = 15.0
    zone_radius_hops: int = 2
    refresh_s: float = 0.1


@dataclass(frozen=True)
class MobilityConfig:
    v_min_mps: float = 0.0
    v_max_mps: float = 1.0
    mean_epoch_s: float = 10.0


@dataclass(frozen=True)
class RadioConfig:
    rate_mbps: Union[float, tuple] = 11.0
    loss_exponent: float = 3.0
    fading_factor: Union[float, tuple] = 1.0


@dataclass(frozen=True)
class CalibrationConfig:
    k_power: float = 0.2
    capacity_exponent_sign: str = "decay"
    sigma_scale: float = 1e-3


@dataclass(frozen=True)
class TrafficConfig:
    flow_count: int = 10
    packet_size_bytes: int = 512
    pareto_shape: float = 2.5
    pareto_scale_s: float = 0.06
    flow_tags: tuple = ("video", "bulk")
    prioritized_tags: tuple = ("audio", "video")


@dataclass(frozen=True)
class StreamConfig:
    chunk_count: int = 10
    tau0_s: float = 2.0
    delay_bound_s: float = 2.0
    packet_deadline_s: float = 2.0


@dataclass(frozen=True)
class CacheConfig:
    capacity_bytes: int = 1_000_000_000
    sigma_band: tuple = (0.2, 0.99)
    max_hold_fraction: float = 0.25


@dataclass(frozen=True)
class EnergyConfig:
    initial_j: float = 0.01
    active_power_uw: float = 1600.0
    rx_ratio: float = 0.5
    idle_ratio: float = 0.05
    sleep_ratio: float = 0.01
    idle_timeout_s: float = 0.5
    sleep_timeout_s: float = 1.0
    wake_s: float = 0.002
    hold_j_per_byte_s: float = 1e-9
    eff_window_s: float = 1.0


@dataclass(frozen=True)
class Scenario:
    seed: int = 42
    horizon_s: float = 60.0
    metrics_interval_s: float = 0.5
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    radio: RadioConfig = field(default_factory=RadioConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)
    cache: CacheConfig = field(default_factory=CacheConfig)
    energy: EnergyConfig = field(default_factory=EnergyConfig)


# coercion

def _coerce(value: Any, default: Any, name: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(name, "must be a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(name, "must be an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, (list, tuple)) and name.split(".")[-1] in _PER_NODE_FIELDS:
            return tuple(_coerce(v, 0.0, name) for v in value)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, "must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(name, "must be a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(name, "must be a list")
        if default and isinstance(default[0], str):
            return tuple(str(v) for v in value)
        return tuple(_coerce(v, 0.0, name) for v in value)
    raise ConfigError(name, f"unsupported value {value!r}")


_PER_NODE_FIELDS = {"rate_mbps", "fading_factor"}


def _build(cls, data: Any, prefix: str = ""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "must be a mapping")
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{prefix}{key}", "unknown key")
    kwargs = {}
    default_obj = cls()
    for name, f in known.items():
        if name not in data:
            continue
        default = getattr(default_obj, name)
        if is_dataclass(default):
            kwargs[name] = _build(type(default), data[name], f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(data[name], default, f"{prefix}{name}")
    return cls(**kwargs)


def _plain(obj):
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    return obj


# validation

def _check(cond: bool, name: str, constraint: str):
    if not cond:
        raise ConfigError(name, constraint)


def _positive(values, name):
    vals = values if isinstance(values, tuple) else (values,)
    _check(all(v > 0 for v in vals), name, "must be > 0")


def validate(s: Scenario) -> Scenario:
    t, m, r, c = s.topology, s.mobility, s.radio, s.calibration
    tr, st, ca, e = s.traffic, s.stream, s.cache, s.energy
    _check(s.horizon_s >= 0, "horizon_s", "must be >= 0")
    _positive(s.metrics_interval_s, "metrics_interval_s")
    _check(t.node_count >= 2, "topology.node_count", "must be >= 2")
    _check(len(t.area_m) == 2, "topology.area_m", "must be [width, height]")
    _positive(t.area_m, "topology.area_m")
    _positive(t.comm_range_m, "topology.comm_range_m")
    _check(t.zone_radius_hops >= 1, "topology.zone_radius_hops", "must be >= 1")
    _check(t.refresh_s >= 0, "topology.refresh_s", "must be >= 0")
    _check(0 <= m.v_min_mps <= m.v_max_mps, "mobility.v_min_mps",
           "must satisfy 0 <= v_min_mps <= v_max_mps")
    _positive(m.mean_epoch_s, "mobility.mean_epoch_s")
    for name in ("rate_mbps", "fading_factor"):
        value = getattr(r, name)
        if isinstance(value, tuple):
            _check(len(value) == t.node_count, f"radio.{name}",
                   f"per-node list must have node_count ({t.node_count}) entries")
    _positive(r.rate_mbps, "radio.rate_mbps")
    _check(2.0 < r.loss_exponent <= 4.0, "radio.loss_exponent", "must lie in (2, 4]")
    fad = r.fading_factor if isinstance(r.fading_factor, tuple) else (r.fading_factor,)
    _check(all(f >= 0 for f in fad), "radio.fading_factor", "must be >= 0")
    _positive(c.k_power, "calibration.k_power")
    _check(c.capacity_exponent_sign in ("decay", "growth"),
           "calibration.capacity_exponent_sign", "must be 'decay' or 'growth'")
    _positive(c.sigma_scale, "calibration.sigma_scale")
    _check(tr.flow_count >= 0, "traffic.flow_count", "must be >= 0")
    _positive(tr.packet_size_bytes, "traffic.packet_size_bytes")
    _check(tr.pareto_shape > 1, "traffic.pareto_shape", "must be > 1 (finite mean)")
    _positive(tr.pareto_scale_s, "traffic.pareto_scale_s")
    _check(len(tr.flow_tags) >= 1, "traffic.flow_tags", "must list at least one tag")
    _check(st.chunk_count >= 1, "stream.chunk_count", "must be >= 1")
    _positive(st.tau0_s, "stream.tau0_s")
    _positive(st.delay_bound_s, "stream.delay_bound_s")
    _positive(st.packet_deadline_s, "stream.packet_deadline_s")
    _positive(ca.capacity_bytes, "cache.capacity_bytes")
    _check(len(ca.sigma_band) == 2, "cache.sigma_band", "must be [low, high]")
    lo, hi = ca.sigma_band
    _check(0 < lo < hi <= 1, "cache.sigma_band", "must satisfy 0 < low < high <= 1")
    _check(0 < ca.max_hold_fraction <= 1, "cache.max_hold_fraction", "must lie in (0, 1]")
    _positive(e.initial_j, "energy.initial_j")
    _positive(e.active_power_uw, "energy.active_power_uw")
    _positive(e.rx_ratio, "energy.rx_ratio")
    _check(0 < e.sleep_ratio < e.idle_ratio < 1, "energy.idle_ratio",
           "ratios must satisfy 0 < sleep_ratio < idle_ratio < 1 (active)")
    _check(e.idle_timeout_s >= 0, "energy.idle_timeout_s", "must be >= 0")
    _check(e.sleep_timeout_s >= 0, "energy.sleep_timeout_s", "must be >= 0")
    _check(e.wake_s >= 0, "energy.wake_s", "must be >= 0")
    _check(e.hold_j_per_byte_s >= 0, "energy.hold_j_per_byte_s", "must be >= 0")
    _positive(e.eff_window_s, "energy.eff_window_s")
    return s


def scenario_from_dict(data: Any) -> Scenario:
    return validate(_build(Scenario, data))


def scenario_to_dict(s: Scenario) -> dict:
    return _plain(s)


def parse_scenario(path) -> Scenario:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from exc
    return scenario_from_dict(data)


def emit_scenario(s: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(s), sort_keys=False)


# sweeps

def _leaf_paths(obj, prefix=""):
    for f in fields(obj):
        value = getattr(obj, f.name)
        if is_dataclass(value):
            yield from _leaf_paths(value, f"{prefix}{f.name}.")
        else:
            yield f"{prefix}{f.name}", value


def resolve_field(name: str) -> str:
    """Accept a dotted path or a unique leaf name such as ``comm_range_m``."""
    paths = dict(_leaf_paths(Scenario()))
    if name in paths:
        return name
    matches = [p for p in paths if p.rsplit(".", 1)[-1] == name]
    if len(matches) == 1:
        return matches[0]
    if not matches:
        raise ConfigError(name, "no such scenario field")
    raise ConfigError(name, f"ambiguous, could be any of {matches}")


def is_scalar_field(path: str) -> bool:
    value = dict(_leaf_paths(Scenario()))[path]
    return isinstance(value, (int, float, str)) and not isinstance(value, bool)


def with_field(s: Scenario, path: str, value: Any) -> Scenario:
    """Return a validated copy of ``s`` with one (dotted) field replaced."""
    data = scenario_to_dict(s)
    node = data
    parts = path.split(".")
    for part in parts[:-1]:
        node = node[part]
    node[parts[-1]] = value
    return scenario_from_dict(data)


def replace(s: Scenario, **sections) -> Scenario:
    return validate(dataclasses.replace(s, **sections))
