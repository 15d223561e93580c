"""Command-line entry point: ``cpinn <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ExperimentConfig, shipped_config, shipped_configs_dir
from .errors import CpinnError
from .pipeline import STAGES, TABLES, StageError, export_curves, reproduce_table, run_experiment

log = logging.getLogger("cpinn")


def _load_config(args):
    if args.config is None:
        raise CpinnError("--config is required")
    p = Path(args.config)
    cfg = ExperimentConfig.load(p) if p.exists() or p.suffix == ".json" else shipped_config(args.config)
    if args.seed is not None:
        d = cfg.to_dict()
        d["seed"] = args.seed
        cfg = ExperimentConfig.from_dict(d)
    return cfg


def _stage_cmd(stages):
    def run(args):
        cfg = _load_config(args)
        out = args.out or cfg.output_dir or f"runs/{cfg.name}"
        run_experiment(cfg, out, args.fast, stages=stages)
        print(f"{cfg.name}: {', '.join(stages)} done -> {out}")
        return 0

    return run


def _cmd_run(args):
    cfg = _load_config(args)
    out = args.out or cfg.output_dir or f"runs/{cfg.name}"
    _, reports = run_experiment(cfg, out, args.fast)
    for r in reports:
        print(f"{r.model:8s} {r.stage:15s} {r.region:8s} coverage={r.empirical:.3f} (expected {r.expected:.2f}) "
              f"ACD={r.acd:.4f} sharpness={r.sharpness:.4f}")
    print(f"artifacts in {out}")
    return 0


def _cmd_reproduce(args):
    if not (args.fast or args.accept_budget):
        print(
            "error: full-scale reproduction takes tens of minutes to hours of CPU time; "
            "pass --accept-budget to proceed or --fast for the desk-scale run",
            file=sys.stderr,
        )
        return 2
    out = args.out or f"runs/reproduce_{args.table}"
    header, rows = reproduce_table(args.table, out, args.fast)
    print(",".join(header))
    for r in rows:
        print(",".join(str(v) for v in r))
    print(f"table written to {Path(out) / (args.table + '.csv')}")
    return 0


def _cmd_export(args):
    csv_path, svg_path = export_curves(args.run_dir)
    print(f"wrote {csv_path} and {svg_path}")
    return 0


def _cmd_configs(args):
    for p in sorted(shipped_configs_dir().glob("*.json")):
        print(p.stem)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="cpinn", description="Conformal calibration of PINN uncertainty estimates.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config JSON path or shipped config name")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--fast", action="store_true", help="desk scale: training epochs divided by 10")
        p.add_argument("--out", help="run directory")

    helps = {
        "gen-data": "generate and save the train/cal/test split",
        "train": "train the network (and VI/HMC posterior)",
        "calibrate": "build raw and conformal predictors",
        "eval": "compute metrics, curves, widths and plots",
    }
    for st in STAGES:
        p = sub.add_parser(st, help=helps[st])
        common(p)
        p.set_defaults(func=_stage_cmd((st,)))
    p = sub.add_parser("run", help="run all stages")
    common(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("reproduce", help="reproduce a results table")
    p.add_argument("table", choices=sorted(TABLES))
    p.add_argument("--fast", action="store_true", help="desk scale: training epochs divided by 10")
    p.add_argument("--accept-budget", action="store_true", help="acknowledge the full-scale compute budget")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=_cmd_reproduce)

    p = sub.add_parser("export-curves", help="re-export coverage curves of a finished run")
    p.add_argument("run_dir")
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("configs", help="list shipped configs")
    p.set_defaults(func=_cmd_configs)
    return ap


def _limit_threads():
    n = os.environ.get("CPINN_THREADS")
    if not n:
        return None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        log.warning("CPINN_THREADS set but threadpoolctl is not installed")
        return None
    return threadpool_limits(limits=int(n))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    limiter = _limit_threads()
    try:
        return args.func(args)
    except StageError as e:
        print(f"error [{e.stage}]: {e}", file=sys.stderr)
        return 1
    except CpinnError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
