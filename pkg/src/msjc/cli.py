"""Command-line interface.

Subcommands: ``make-scenario``, ``calibrate``, ``run``, ``compare``,
``report``.  Set MSJC_LOG=debug|info|warning to control verbosity.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from . import fixtures, mfd as mfdmod, netmodel, runner


def _add_scenario_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True, help="scenario YAML path")
    p.add_argument("--mfd", default=None, help="calibrated MFD YAML (overrides the scenario's block)")


def _load(args) -> tuple[netmodel.Scenario, mfdmod.MfdModel | None]:
    scenario = netmodel.load_scenario(args.scenario)
    model = mfdmod.load_mfd(args.mfd) if getattr(args, "mfd", None) else None
    return scenario, model


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("MSJC_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))

    parser = argparse.ArgumentParser(prog="msjc")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-scenario", help="write a bundled synthetic scenario")
    p.add_argument("name", choices=sorted(fixtures.BUILTIN))
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--without-mfd", action="store_true", help="omit the calibrated MFD block")

    p = sub.add_parser("calibrate", help="fit per-region MFDs from a demand sweep")
    _add_scenario_arg(p)
    p.add_argument("--out", required=True, help="output MFD YAML")
    p.add_argument("--levels", type=float, nargs="+", default=[0.25, 0.5, 0.75, 1.0, 1.25])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", type=float, default=120.0)

    p = sub.add_parser("run", help="one closed-loop run")
    _add_scenario_arg(p)
    p.add_argument("--strategy", required=True, choices=runner.STRATEGIES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--demand-scale", type=float, default=1.0)
    cap = p.add_mutually_exclusive_group()
    cap.add_argument("--until-cleared", action="store_true", default=True)
    cap.add_argument("--cap", type=float, default=None, help="hard stop (seconds)")

    p = sub.add_parser("compare", help="run several strategies x seeds and summarize")
    _add_scenario_arg(p)
    p.add_argument("--strategies", nargs="+", default=list(runner.STRATEGIES))
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--reps", type=int, default=1, help="replications per strategy")
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="re-summarize a comparison directory")
    p.add_argument("--out", required=True, help="directory holding comparison.csv")

    args = parser.parse_args(argv)

    if args.command == "make-scenario":
        scenario = fixtures.BUILTIN[args.name](with_mfd=not args.without_mfd)
        netmodel.save_scenario(scenario, args.out)
        print(f"wrote {args.out}")
        return 0

    if args.command == "calibrate":
        scenario, _ = _load(args)
        model = runner.calibrate(
            scenario, levels=tuple(args.levels), seed=args.seed, window_s=args.window
        )
        mfdmod.save_mfd(model, args.out)
        for region in model.regions():
            p = model.params[region]
            print(
                f"{region}: G(N) = {p.b3:.3e} N^3 + {p.b2:.3e} N^2 + {p.b1:.3e} N, "
                f"N_crit = {p.n_crit:.1f} veh"
            )
        return 0

    if args.command == "run":
        scenario, model = _load(args)
        cfg = runner.RunConfig(
            strategy=args.strategy,
            seed=args.seed,
            demand_scale=args.demand_scale,
            out_dir=args.out,
            cap_s=args.cap,
        )
        metrics = runner.run(scenario, cfg, model=model)
        print(
            f"{metrics.strategy} seed {metrics.seed}: "
            f"TTT {metrics.total_travel_time_veh_s:.0f} veh*s, "
            f"throughput {metrics.throughput_veh}/{metrics.injected_veh} veh, "
            f"cleared at {metrics.clearance_time_s:.0f} s"
            + (" (truncated)" if metrics.truncated else "")
        )
        return 0

    if args.command == "compare":
        scenario, model = _load(args)
        seeds = tuple(range(args.seed, args.seed + args.reps))
        runs = runner.compare(
            scenario, tuple(args.strategies), seeds, out_dir=args.out, model=model
        )
        for row in runner.summarize(runs):
            print(
                f"{row['strategy']:8s} TTT {row['mean_total_travel_time_veh_s']:12.0f}"
                f" +- {row['std_total_travel_time_veh_s']:8.0f} veh*s   "
                f"throughput {row['mean_throughput_veh']:8.1f}"
                f" +- {row['std_throughput_veh']:6.1f} veh"
            )
        return 0

    if args.command == "report":
        path = Path(args.out) / "comparison.csv"
        if not path.exists():
            print(f"no comparison.csv under {args.out}", file=sys.stderr)
            return 1
        runs = []
        with open(path) as fh:
            for row in csv.DictReader(fh):
                runs.append(
                    runner.RunMetrics(
                        strategy=row["strategy"],
                        seed=int(row["seed"]),
                        total_travel_time_veh_s=float(row["total_travel_time_veh_s"]),
                        throughput_veh=int(row["throughput_veh"]),
                        injected_veh=int(row["injected_veh"]),
                        clearance_time_s=float(row["clearance_time_s"]),
                        truncated=bool(int(row["truncated"])),
                        first_activation_s=(
                            float(row["first_activation_s"])
                            if row["first_activation_s"]
                            else None
                        ),
                    )
                )
        for row in runner.report(runs, args.out):
            print(
                f"{row['strategy']:8s} TTT {row['mean_total_travel_time_veh_s']:12.0f}"
                f" +- {row['std_total_travel_time_veh_s']:8.0f} veh*s"
            )
        return 0

    return 1


if __name__ == "__main__":
    raise SystemExit(main())
