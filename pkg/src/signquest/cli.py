"""Command-line entry point: run scenarios, sweep the balance factor, and
summarize result directories."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness import (
    ConfigError,
    ablation_sweep,
    bundled_scenario_path,
    load_scenario,
    report_dir,
    run_scenario,
)
from .metrics import aggregate
from .venue import VenueMapError
from .world import WorldError


def _scenario_arg(value: str) -> Path:
    p = Path(value)
    if p.exists():
        return p
    if not value.endswith(".json"):
        return bundled_scenario_path(value)
    raise ConfigError(f"scenario file not found: {value}")


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_scenario(
        _scenario_arg(args.scenario),
        trials=args.trials,
        seed=args.seed,
        mode=args.mode,
        beta=args.beta,
    )
    metrics = run_scenario(cfg, args.out)
    agg = aggregate(metrics)
    cov = agg["covered"]
    tps = agg["time_per_signage"]
    print(f"scenario {cfg.name} mode={cfg.mode} trials={len(metrics)}")
    print(f"  coverage: {cov['mean']:.2f} ± {cov['std']:.2f} / {agg['total_signage']}")
    if tps.get("mean") is not None:
        print(f"  time per signage: {tps['mean']:.2f} ± {tps['std']:.2f} s")
    else:
        print("  time per signage: n/a (no coverage)")
    if args.out:
        print(f"  artifacts: {args.out}")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    try:
        betas = [float(b) for b in args.betas.split(",") if b.strip()]
    except ValueError as e:
        raise ConfigError(f"invalid --betas list: {args.betas!r}") from e
    cfg = load_scenario(
        _scenario_arg(args.scenario), trials=args.trials, seed=args.seed, mode="ours"
    )
    result = ablation_sweep(cfg, betas, args.out)
    print(result["markdown"], end="")
    if args.out:
        print(f"artifacts: {args.out}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    print(report_dir(args.dir), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="explore",
        description="Signage-aware venue-map exploration experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario")
    p_run.add_argument("scenario", help="scenario JSON path or bundled name (e.g. mall4_s1)")
    p_run.add_argument("--out", default=None, help="artifact output directory")
    p_run.add_argument("--trials", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--mode", choices=["ours", "baseline"], default=None)
    p_run.add_argument("--beta", type=float, default=None)
    p_run.set_defaults(func=_cmd_run)

    p_abl = sub.add_parser("ablate", help="sweep the balance factor")
    p_abl.add_argument("scenario")
    p_abl.add_argument("--betas", default="3,9,15")
    p_abl.add_argument("--out", default=None)
    p_abl.add_argument("--trials", type=int, default=None)
    p_abl.add_argument("--seed", type=int, default=None)
    p_abl.set_defaults(func=_cmd_ablate)

    p_rep = sub.add_parser("report", help="aggregate a results directory")
    p_rep.add_argument("dir")
    p_rep.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, VenueMapError, WorldError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure after config validation
        print(f"runtime error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
