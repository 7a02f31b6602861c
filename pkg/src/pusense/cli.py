"""Command-line entry point: ``pusense {plan,run,sweep,baseline,report}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

from .harness import (AXES, WORKERS_ENV, ConfigError, ExperimentConfig, aggregate_sweep,
                      build_plan, channel_csv, run_baseline_comparison, run_point,
                      run_sweep, summary_csv, write_manifest, _write)
from .traffic import PlanError

# flag -> config field
FLAGS = {
    "seed": ("master_seed", int),
    "channels": ("n_channels", int),
    "target_mean_dc": ("target_mean_dc", float),
    "snr_db": ("snr_db", float),
    "amplitude_law": ("amplitude_law", str),
    "duration": ("sensing_duration", float),
    "ts": ("sensing_period", float),
    "ratio": ("compression_ratio", float),
    "penalty": ("penalty", float),
    "penalty_scale": ("penalty_scale", float),
    "max_iterations": ("max_iterations", int),
    "tol": ("convergence_tol", float),
    "operator": ("operator", str),
    "threshold_mode": ("threshold_mode", str),
    "threshold_db": ("threshold_db", float),
    "threshold": ("threshold", float),
    "p_fa": ("p_fa", float),
    "variant": ("variant", str),
    "corrections": ("corrections", str),
    "mu_source": ("mu_source", str),
    "replicates": ("replicates", int),
    "chunk_size": ("chunk_size", int),
    "output": ("output", str),
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override it")
    for flag, (_, typ) in FLAGS.items():
        common.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ)
    common.add_argument("--groups", help='duty-cycle groups as JSON, e.g. "[[0.5, 128]]"')
    common.add_argument("--majority-filter", action="store_true", default=None)
    common.add_argument("--redraw-operator", action="store_true", default=None)
    common.add_argument("--no-momentum", action="store_true")
    common.add_argument("--workers", type=int, help=f"worker processes (env {WORKERS_ENV})")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="pusense", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    pl = sub.add_parser("plan", parents=[common], help="print the resolved channel plan")
    pl.add_argument("--out", help="write the plan JSON here instead of stdout")
    sub.add_parser("run", parents=[common], help="run one sweep point")
    sw = sub.add_parser("sweep", parents=[common], help="sweep one axis")
    sw.add_argument("--axis", required=True, choices=sorted(AXES))
    sw.add_argument("--values", required=True, type=float, nargs="+")
    sub.add_parser("baseline", parents=[common], help="compressive vs full-rate detection")
    rp = sub.add_parser("report", parents=[common], help="rebuild a sweep summary from point files")
    rp.add_argument("--axis", required=True, choices=sorted(AXES))
    return p


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    updates = {field: getattr(args, flag) for flag, (field, _) in FLAGS.items()
               if getattr(args, flag) is not None}
    if args.groups:
        try:
            updates["groups"] = json.loads(args.groups)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--groups is not valid JSON: {exc}") from exc
        updates["n_channels"] = sum(int(c) for _, c in updates["groups"])
    if args.majority_filter:
        updates["majority_filter"] = True
    if args.redraw_operator:
        updates["redraw_operator"] = True
    if args.no_momentum:
        updates["momentum"] = False
    if getattr(args, "axis", None) and args.command == "sweep":
        updates["sweep_axis"] = args.axis
        updates["sweep_values"] = list(args.values)
    return dataclasses.replace(cfg, **updates).validate()


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers is not None:
        os.environ[WORKERS_ENV] = str(args.workers)
    try:
        cfg = config_from_args(args)
        out = Path(cfg.output)
        if args.command == "plan":
            text = json.dumps(build_plan(cfg).to_dict(), indent=2) + "\n"
            if args.out:
                _write(Path(args.out), text)
            else:
                sys.stdout.write(text)
        elif args.command == "run":
            started = time.time()
            report = run_point(cfg, 0)
            _write(out / "point.csv", channel_csv(report))
            _write(out / "point.summary.csv", summary_csv(report))
            write_manifest(cfg, out, started)
            sys.stdout.write(summary_csv(report))
        elif args.command == "sweep":
            print(run_sweep(cfg))
        elif args.command == "baseline":
            print(run_baseline_comparison(cfg))
        elif args.command == "report":
            if not (out / "points").is_dir():
                raise OSError(f"no point files under {out / 'points'}")
            path = out / f"sweep_{args.axis}.csv"
            _write(path, aggregate_sweep(out, args.axis))
            print(path)
    except (ConfigError, PlanError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
