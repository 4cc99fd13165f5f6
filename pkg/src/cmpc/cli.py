"""Command line front end: episode batches, consensus sweeps, self checks.

Exit codes: 0 on success, 1 for configuration problems (missing files,
invalid overrides), 2 when the planner gave up inside any episode. Set
CMPC_LOG=DEBUG or INFO for progress chatter.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from .metrics import (
    BASELINE_KINDS,
    baseline_config,
    run_baseline,
    sweep_consensus,
    sweep_csv,
    write_reports,
)
from .planner import PlannerConfig
from .world import Scenario

log = logging.getLogger("cmpc")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PLANNER = 2


def parse_seeds(text: str) -> list[int]:
    """Seed lists come as "0:20" (half-open range) or "0,3,7"."""
    text = text.strip()
    if ":" in text:
        lo, hi = text.split(":", 1)
        lo, hi = int(lo), int(hi)
        if hi <= lo:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(lo, hi))
    return [int(tok) for tok in text.split(",") if tok]


def parse_branches(text: str) -> tuple:
    """Comma list of assumed top speeds; the token "x" is the hypothesis
    that ignores risk regions altogether."""
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        out.append(None if tok.lower() == "x" else float(tok))
    if not out:
        raise ValueError("at least one branch is required")
    return tuple(out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmpc",
        description="occlusion-aware consensus MPC: episodes, sweeps, self checks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run episodes of one planner variant")
    run.add_argument("--scenario", required=True, help="scenario JSON path")
    run.add_argument(
        "--planner",
        default="cmpc",
        choices=sorted(BASELINE_KINDS),
        help="planner variant (default cmpc)",
    )
    run.add_argument("--seeds", default="0", help='seed list "0,3,7" or range "0:20"')
    run.add_argument("--out", default="cmpc_out", help="output directory")
    run.add_argument("--consensus-sec", type=float, default=None)
    run.add_argument("--branches", default=None, help='speeds, "x" = ignore risk')
    run.add_argument("--max-iters", type=int, default=None)
    run.add_argument("--sensor-range", type=float, default=None)
    run.add_argument("--jobs", type=int, default=1)

    sweep = sub.add_parser("sweep", help="consensus-length ablation grid")
    sweep.add_argument("--scenario", required=True)
    sweep.add_argument("--seeds", default="0:4")
    sweep.add_argument("--lengths", default="0,1,2,5", help="consensus lengths in s")
    sweep.add_argument("--out", default="cmpc_out")
    sweep.add_argument("--sensor-range", type=float, default=None)
    sweep.add_argument("--jobs", type=int, default=1)

    sub.add_parser("verify", help="run the built-in self checks")
    return parser


def _load_scenario(path: str, sensor_range) -> Scenario:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"scenario file not found: {p}")
    scenario = Scenario.from_json(p)
    # flags outrank file values; sensor range lives on the scenario because
    # run_episode pins the planner to it
    if sensor_range is not None:
        scenario = dataclasses.replace(scenario, sensor_range=float(sensor_range))
    return scenario


def _planner_overrides(args) -> PlannerConfig:
    cfg = baseline_config(args.planner)
    if args.consensus_sec is not None:
        cfg = dataclasses.replace(cfg, consensus_sec=args.consensus_sec)
    if args.branches is not None:
        cfg = dataclasses.replace(cfg, branch_speeds=parse_branches(args.branches))
    if args.max_iters is not None:
        if args.max_iters <= 0:
            raise ValueError("--max-iters must be positive")
        cfg = dataclasses.replace(
            cfg, solver=dataclasses.replace(cfg.solver, max_iters=args.max_iters)
        )
    return cfg


def cmd_run(args) -> int:
    scenario = _load_scenario(args.scenario, args.sensor_range)
    seeds = parse_seeds(args.seeds)
    cfg = _planner_overrides(args)
    out_dir = Path(args.out)
    log.info("running %s on %s, %d seeds", args.planner, scenario.name, len(seeds))
    agg = run_baseline(
        args.planner, scenario, seeds, base=cfg, jobs=args.jobs, log_dir=out_dir
    )
    write_reports([agg], out_dir)
    s = agg.summary()
    print(
        f"{args.planner} on {scenario.name}: {s['episodes']} episodes, "
        f"collisions {s['collisions']}, reached goal {s['reached_goal']}, "
        f"lat vel ptp {s['max_lat_vel_variance']['mean']:.3f} m/s, "
        f"peak lat acc {s['peak_lat_acc']['mean']:.3f} m/s^2"
    )
    print(f"wrote {out_dir / 'results.csv'}")
    if s["planner_failures"] > 0:
        print(f"planner failures in {s['planner_failures']} cycle(s)", file=sys.stderr)
        return EXIT_PLANNER
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = _load_scenario(args.scenario, args.sensor_range)
    seeds = parse_seeds(args.seeds)
    lengths = [float(tok) for tok in args.lengths.split(",") if tok.strip()]
    if not lengths:
        raise ValueError("--lengths must name at least one consensus length")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log.info("sweeping consensus lengths %s on %s", lengths, scenario.name)
    rows = sweep_consensus(scenario, seeds, lengths=lengths, jobs=args.jobs)
    table = sweep_csv(rows)
    (out_dir / "sweep.csv").write_text(table)
    write_reports([agg for _, agg in rows], out_dir)
    print(table, end="")
    print(f"wrote {out_dir / 'sweep.csv'}")
    failures = sum(r.planner_failures for _, agg in rows for r in agg.reports)
    if failures > 0:
        print(f"planner failures in {failures} cycle(s)", file=sys.stderr)
        return EXIT_PLANNER
    return EXIT_OK


def cmd_verify(_args) -> int:
    from . import verify

    return verify.main()


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("CMPC_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify}[args.command]
    try:
        return handler(args)
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
