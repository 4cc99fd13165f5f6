#!/usr/bin/env python3
"""Consensus-length ablation over {0, 1, 2, 5} s.

The consistency metrics should bottom out at an interior length: no
consensus lets the branches disagree freely at the applied step, a
horizon-long consensus drags every hypothesis into one over-committed
plan. The 0 s cell runs the dedicated no-consensus variant.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from cmpc.metrics import sweep_consensus, sweep_csv, write_reports
from cmpc.world import Scenario


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--scenario",
        default=str(Path(__file__).resolve().parent.parent / "scenarios" / "canonical_occluded.json"),
    )
    parser.add_argument("--seeds", type=int, default=20, help="seeds 0..N-1")
    parser.add_argument("--lengths", default="0,1,2,5")
    parser.add_argument("--out", default="results/sweep")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()

    scenario = Scenario.from_json(args.scenario)
    lengths = [float(tok) for tok in args.lengths.split(",") if tok.strip()]
    rows = sweep_consensus(scenario, range(args.seeds), lengths=lengths, jobs=args.jobs)

    table = sweep_csv(rows)
    print(table, end="")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.csv").write_text(table)
    write_reports([agg for _, agg in rows], out_dir)
    print(f"wrote {out_dir / 'sweep.csv'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
