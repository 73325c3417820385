"""Run metrics and the per-figure aggregations written as CSV.

Every aggregation is a pure function of a ``RunMetrics``; re-aggregating the
same run produces identical rows.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .model import ThroughputStats, effective_throughput

SIGMA_BUCKET = 0.05

FIG5_HEADER = ("zone_node_count", "mean_power_uW")
FIG5_DIST_HEADER = ("max_link_distance_m", "mean_power_uW")
FIG6_HEADER = ("sigma_bucket", "mean_caching_delay_s")
FIG7_HEADER = ("mean_eff_throughput", "mean_power_uW")
FIG8_HEADER = ("time_s", "zone_id", "mean_residual_j")
SUMMARY_SCHEMA = "sodsim.summary/1"


@dataclass(frozen=True)
class PowerSample:
    time_s: float
    node: int
    zone_node_count: int
    distance_m: float
    power_uw: float


@dataclass(frozen=True)
class CacheSample:
    time_s: float
    node: int
    sigma: float
    delay_estimate_s: float
    hold_s: float


@dataclass
class StreamCounters:
    flow_id: int
    priority: str
    bandwidth_bps: float
    generated: int = 0
    delivered: int = 0
    dropped: int = 0
    bits_delivered: float = 0.0
    first_tx_s: Optional[float] = None
    last_delivery_s: Optional[float] = None

    def stats(self) -> Optional[ThroughputStats]:
        sent = self.delivered + self.dropped
        if sent == 0:
            return None
        if not self.delivered:
            return ThroughputStats(sent, 0, 0.0, 0.0, self.bandwidth_bps)
        span = self.last_delivery_s - self.first_tx_s
        return ThroughputStats(sent, self.delivered, self.bits_delivered, span,
                               self.bandwidth_bps)

    def effective_throughput(self) -> Optional[float]:
        st = self.stats()
        if st is None:
            return None
        if st.transfer_time_s <= 0:
            return 0.0
        return effective_throughput(st)


@dataclass
class RunMetrics:
    node_count: int = 0
    initial_energy_j: float = 0.0
    sample_times: list = field(default_factory=list)
    residuals: list = field(default_factory=list)        # one tuple of node residuals per sample
    ledger_debits_j: list = field(default_factory=list)  # cumulative debits per sample
    zones: dict = field(default_factory=dict)            # zone_id -> tuple of member ids
    power_samples: list = field(default_factory=list)
    cache_samples: list = field(default_factory=list)
    sigma_samples: list = field(default_factory=list)
    streams: dict = field(default_factory=dict)          # flow_id -> StreamCounters
    delays: dict = field(default_factory=lambda: {"prioritized": [], "dont_care": []})
    stream_outcomes: dict = field(default_factory=lambda: {"in_bound": 0, "bound_violated": 0})
    packets: dict = field(default_factory=dict)
    drop_reasons: dict = field(default_factory=dict)
    energy: dict = field(default_factory=dict)
    events_processed: int = 0

    def record_sample(self, time_s: float, residuals: Sequence[float], debits_j: float) -> None:
        if self.sample_times and time_s <= self.sample_times[-1]:
            raise ValueError("sample timestamps must be strictly increasing")
        self.sample_times.append(time_s)
        self.residuals.append(tuple(residuals))
        self.ledger_debits_j.append(debits_j)


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def fig5_aggregate(metrics: RunMetrics) -> list[tuple[int, float]]:
    groups: dict[int, list[float]] = defaultdict(list)
    for s in metrics.power_samples:
        groups[s.zone_node_count].append(s.power_uw)
    return [(k, _mean(groups[k])) for k in sorted(groups)]


def fig5_by_distance(metrics: RunMetrics, bin_m: float = 1.0) -> list[tuple[float, float]]:
    """Mean power grouped by link distance, binned up to the next ``bin_m`` multiple."""
    groups: dict[int, list[float]] = defaultdict(list)
    for s in metrics.power_samples:
        groups[max(1, math.ceil(s.distance_m / bin_m))].append(s.power_uw)
    return [(k * bin_m, _mean(groups[k])) for k in sorted(groups)]


def sigma_bucket(sigma: float, width: float = SIGMA_BUCKET) -> float:
    return round(math.floor(sigma / width + 1e-9) * width, 10)


def fig6_aggregate(metrics: RunMetrics, width: float = SIGMA_BUCKET) -> list[tuple[float, float]]:
    groups: dict[float, list[float]] = defaultdict(list)
    for s in metrics.cache_samples:
        groups[sigma_bucket(s.sigma, width)].append(s.delay_estimate_s)
    return [(k, _mean(groups[k])) for k in sorted(groups)]


def mean_effective_throughput(metrics: RunMetrics) -> float:
    values = [v for v in (c.effective_throughput() for _, c in sorted(metrics.streams.items()))
              if v is not None]
    return _mean(values) if values else 0.0


def mean_power(metrics: RunMetrics) -> float:
    if not metrics.power_samples:
        return 0.0
    return _mean(s.power_uw for s in metrics.power_samples)


def fig7_aggregate(metrics: RunMetrics) -> list[tuple[float, float]]:
    return [(mean_effective_throughput(metrics), mean_power(metrics))]


def fig8_aggregate(metrics: RunMetrics) -> list[tuple[float, int, float]]:
    rows = []
    for t, residuals in zip(metrics.sample_times, metrics.residuals):
        for zone_id in sorted(metrics.zones):
            members = metrics.zones[zone_id]
            rows.append((t, zone_id, _mean(residuals[n] for n in members)))
    return rows


def frontier(points: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    """Points not dominated in (higher throughput, lower power), by rising throughput.

    Along the result power never decreases as throughput rises.
    """
    best: list[tuple[float, float]] = []
    for eff, power in sorted(points, key=lambda p: (-p[0], p[1])):
        if not best or power < best[-1][1]:
            best.append((eff, power))
    best.reverse()
    return best


def is_monotone_non_decreasing(values: Sequence[float]) -> bool:
    return all(b >= a for a, b in zip(values, values[1:]))


def summary(metrics: RunMetrics, **extra) -> dict:
    delays = {k: (_mean(v) if v else None) for k, v in metrics.delays.items()}
    pk = metrics.packets
    resolved = pk.get("delivered", 0) + pk.get("dropped", 0)
    outcomes = metrics.stream_outcomes
    n_streams = outcomes["in_bound"] + outcomes["bound_violated"]
    holds = [s.hold_s for s in metrics.cache_samples]
    out = {
        "schema": SUMMARY_SCHEMA,
        **extra,
        "packets": dict(pk),
        "drop_reasons": dict(sorted(metrics.drop_reasons.items())),
        "loss_rate": (pk.get("dropped", 0) / resolved) if resolved else 0.0,
        "mean_delay_s": delays,
        "streams": {
            "completed": n_streams,
            "in_bound": outcomes["in_bound"],
            "bound_violated": outcomes["bound_violated"],
            "violation_rate": outcomes["bound_violated"] / n_streams if n_streams else 0.0,
        },
        "energy": dict(metrics.energy),
        "caching": {
            "events": len(metrics.cache_samples),
            "mean_hold_s": _mean(holds) if holds else 0.0,
            "sigma_evaluations": len(metrics.sigma_samples),
        },
        "mean_eff_throughput": mean_effective_throughput(metrics),
        "mean_power_uW": mean_power(metrics),
        "transmissions": len(metrics.power_samples),
        "events_processed": metrics.events_processed,
    }
    return out


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def emit_figures(metrics: RunMetrics, out_dir, summary_extra: Optional[dict] = None) -> dict:
    """Write fig5..fig8 CSVs and summary.json into ``out_dir``; return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return {
        "fig5": write_csv(out / "fig5.csv", FIG5_HEADER, fig5_aggregate(metrics)),
        "fig5_by_distance": write_csv(out / "fig5_by_distance.csv", FIG5_DIST_HEADER,
                                      fig5_by_distance(metrics)),
        "fig6": write_csv(out / "fig6.csv", FIG6_HEADER, fig6_aggregate(metrics)),
        "fig7": write_csv(out / "fig7.csv", FIG7_HEADER, fig7_aggregate(metrics)),
        "fig8": write_csv(out / "fig8.csv", FIG8_HEADER, fig8_aggregate(metrics)),
        "summary": write_json(out / "summary.json", summary(metrics, **(summary_extra or {}))),
    }
