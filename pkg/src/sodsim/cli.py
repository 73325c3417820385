"""Command line entry point: ``sodsim run | sweep | validate``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, Scenario, parse_scenario, with_field
from .runner import parse_sweep_arg, run_once, run_sweep
from .simulation import InvariantBreach
from . import metrics as mx

OUT_ENV = "SODSIM_OUT"
DEFAULT_OUT = "sodsim-out"

EXIT_OK = 0
EXIT_USER = 1
EXIT_BREACH = 2


def _load(path) -> Scenario:
    return parse_scenario(path) if path else Scenario()


def _out_dir(arg) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def cmd_run(args) -> int:
    scenario = _load(args.config)
    if args.seed is not None:
        scenario = with_field(scenario, "seed", args.seed)
    out = _out_dir(args.out)
    m = run_once(scenario, out, decision_log=args.decision_log)
    s = mx.summary(m)
    pk = s["packets"]
    print(f"{out}: generated {pk['generated']} delivered {pk['delivered']} "
          f"dropped {pk['dropped']} mean E_ff {s['mean_eff_throughput']:.3f} "
          f"mean power {s['mean_power_uW']:.1f} uW")
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = _load(args.config)
    if args.seed is not None:
        scenario = with_field(scenario, "seed", args.seed)
    axes = [parse_sweep_arg(text) for text in args.sweep]
    paths = [a.path for a in axes]
    if len(set(paths)) != len(paths):
        raise ConfigError(",".join(paths), "each field may be swept once")
    out = _out_dir(args.out)
    rows = run_sweep(scenario, axes, out, jobs=args.jobs)
    for r in rows:
        print(f"point {r['point']:03d} {r['assignment']}: E_ff {r['mean_eff_throughput']:.3f} "
              f"power {r['mean_power_uW']:.1f} uW")
    print(f"{len(rows)} points written to {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    parse_scenario(args.config)
    print(f"{args.config}: ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sodsim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one scenario")
    run.add_argument("--config", help="scenario YAML (defaults when omitted)")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help=f"output directory (else ${OUT_ENV}, else {DEFAULT_OUT})")
    run.add_argument("--decision-log", help="write per-packet forwarding decisions as NDJSON")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="run a cartesian grid of scenarios")
    sw.add_argument("--config")
    sw.add_argument("--seed", type=int, help="base seed; point i uses seed + i")
    sw.add_argument("--sweep", action="append", required=True, metavar="FIELD=V1,V2,...")
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--out")
    sw.set_defaults(func=cmd_sweep)

    val = sub.add_parser("validate", help="check a scenario file")
    val.add_argument("--config", required=True)
    val.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvariantBreach as exc:
        print(f"internal invariant breach: {exc}", file=sys.stderr)
        return EXIT_BREACH
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
