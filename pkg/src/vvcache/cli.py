"""Command-line entry point: ``vvcache run | sweep | report``."""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .content import ConfigError
from .harness import POLICIES, SWEEP_AXES, load_config, report, run_experiment, run_sweep
from .workload import IngestionError


def _floats(text: str) -> list:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("need at least one value")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vvcache", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one policy and write metrics CSVs")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--policy", choices=POLICIES)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", type=Path)
    run.add_argument("--events", action="store_true", help="also write events.jsonl")

    sweep = sub.add_parser("sweep", help="sweep cache size (percent of library), eta_v or eta_p")
    sweep.add_argument("--config", required=True, type=Path)
    sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sweep.add_argument("--values", required=True, type=_floats)
    sweep.add_argument("--policy", help="comma-separated policies (default: the config's)")
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--out", type=Path)
    sweep.add_argument("--jobs", type=int, default=1)

    rep = sub.add_parser("report", help="merge run summaries into report.csv")
    rep.add_argument("--in", dest="in_dir", required=True, type=Path)
    return parser


def _prepare(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = args.out or Path(cfg.out_dir)
    return cfg, out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg, out = _prepare(args)
            if args.policy:
                cfg = dataclasses.replace(cfg, policy=args.policy)
            if args.events:
                cfg = dataclasses.replace(cfg, write_events=True)
            rec = run_experiment(cfg, out)
            print(f"{rec.policy}: Y-PSNR {rec.mean_psnr:.4f} dB, hit ratio {rec.hit_ratio:.4f}, "
                  f"backhaul {rec.backhaul_gb:.3f} GB -> {out}")
        elif args.command == "sweep":
            cfg, out = _prepare(args)
            policies = args.policy.split(",") if args.policy else None
            for p in policies or []:
                if p not in POLICIES:
                    raise ConfigError(f"unknown policy {p!r}")
            results = run_sweep(cfg, args.axis, args.values, policies, out, jobs=args.jobs)
            for value, rec in results:
                print(f"{args.axis}={value:g} {rec.policy}: Y-PSNR {rec.mean_psnr:.4f} dB, "
                      f"hit ratio {rec.hit_ratio:.4f}, backhaul {rec.backhaul_gb:.3f} GB")
            print(f"wrote {out / 'sweep.csv'}")
        else:
            print(f"wrote {report(args.in_dir)}")
    except (ConfigError, IngestionError, FileNotFoundError, OSError) as exc:
        print(f"vvcache: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
