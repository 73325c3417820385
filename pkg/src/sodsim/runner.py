"""Single runs and parameter sweeps with a fixed on-disk layout.

A run directory holds fig5..fig8 CSVs, ``summary.json``, the scenario it was
run with and a topology snapshot. A sweep directory holds one ``point_NNN``
run directory per grid point plus ``sweep.csv`` and ``frontier.csv``.
"""

from __future__ import annotations

import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import metrics as mx
from .config import (ConfigError, Scenario, emit_scenario, is_scalar_field, resolve_field,
                     with_field)
from .simulation import NetworkSimulation

log = logging.getLogger(__name__)

SWEEP_HEADER = ("point", "seed", "field", "value", "mean_eff_throughput", "mean_power_uW",
                "loss_rate", "delivered", "generated")


@dataclass(frozen=True)
class SweepAxis:
    path: str
    values: tuple


def run_once(scenario: Scenario, out_dir, decision_log: Optional[str] = None,
             extra: Optional[dict] = None):
    """Run to the horizon and emit every output file. Returns the RunMetrics."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.yaml").write_text(emit_scenario(scenario), encoding="utf-8")
    if decision_log:
        with open(decision_log, "w", encoding="utf-8") as fh:
            sim = NetworkSimulation(scenario, decision_log=fh)
            m = sim.run()
    else:
        sim = NetworkSimulation(scenario)
        m = sim.run()
    info = {"seed": scenario.seed, "horizon_s": scenario.horizon_s,
            "node_count": scenario.topology.node_count}
    info.update(extra or {})
    mx.emit_figures(m, out, info)
    sim.topo.export_csv(out, scenario.horizon_s)
    return m


def parse_sweep_arg(text: str) -> SweepAxis:
    """``field=v1,v2,...`` with numbers coerced where possible."""
    if "=" not in text:
        raise ConfigError(text, "sweep must look like field=v1,v2,...")
    name, _, raw = text.partition("=")
    path = resolve_field(name.strip())
    if not is_scalar_field(path):
        raise ConfigError(path, "only scalar fields can be swept")
    values = tuple(_number(v.strip()) for v in raw.split(",") if v.strip())
    if not values:
        raise ConfigError(path, "sweep needs at least one value")
    return SweepAxis(path, values)


def _number(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def sweep_points(base: Scenario, axes: Sequence[SweepAxis]) -> list[tuple[dict, Scenario]]:
    """Cartesian grid; point ``i`` runs with seed ``base.seed + i``."""
    points = []
    for i, combo in enumerate(itertools.product(*(a.values for a in axes))):
        s = base
        assignment = {}
        for axis, value in zip(axes, combo):
            s = with_field(s, axis.path, value)
            assignment[axis.path] = value
        s = with_field(s, "seed", base.seed + i)
        points.append((assignment, s))
    return points


def _run_point(args):
    index, assignment, scenario, out = args
    m = run_once(scenario, Path(out) / f"point_{index:03d}", extra={"sweep": assignment})
    s = mx.summary(m)
    return {
        "point": index,
        "seed": scenario.seed,
        "assignment": assignment,
        "mean_eff_throughput": s["mean_eff_throughput"],
        "mean_power_uW": s["mean_power_uW"],
        "loss_rate": s["loss_rate"],
        "delivered": s["packets"]["delivered"],
        "generated": s["packets"]["generated"],
    }


def run_sweep(base: Scenario, axes: Sequence[SweepAxis], out_dir, jobs: int = 1) -> list[dict]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(i, a, s, str(out)) for i, (a, s) in enumerate(sweep_points(base, axes))]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            rows = list(pool.map(_run_point, tasks))
    else:
        rows = [_run_point(t) for t in tasks]
    rows.sort(key=lambda r: r["point"])

    table = []
    for r in rows:
        fields = ";".join(r["assignment"])
        values = ";".join(str(v) for v in r["assignment"].values())
        table.append((r["point"], r["seed"], fields, values, r["mean_eff_throughput"],
                      r["mean_power_uW"], r["loss_rate"], r["delivered"], r["generated"]))
    mx.write_csv(out / "sweep.csv", SWEEP_HEADER, table)
    front = mx.frontier((r["mean_eff_throughput"], r["mean_power_uW"]) for r in rows)
    mx.write_csv(out / "frontier.csv", mx.FIG7_HEADER, front)
    log.info("sweep of %d points written to %s", len(rows), out)
    return rows


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)
