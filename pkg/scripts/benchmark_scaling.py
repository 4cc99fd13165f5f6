#!/usr/bin/env python3
"""Solver timing: per-iteration cost against the visible obstacle count.

Times plan_cycle at a fixed iteration budget while the obstacle count
grows, extra obstacles parked far off the lane so the scene difficulty
stays comparable and only the constraint bookkeeping grows. Per-iteration
cost should fit a line in the obstacle count; the fit and its R^2 are
printed at the end.

Measurement notes: CPU time rather than wall time (preemption on shared
boxes otherwise swamps the percent-level signal), counts visited in
randomized interleaved rounds to spread frequency drift evenly, and the
per-count aggregate is the mean of the faster half of the rounds.
"""

import argparse
import dataclasses
import random
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from cmpc.consensus_solver import plan_cycle
from cmpc.kinematics import RobotState, rollout
from cmpc.planner import CmpcPlanner, ObstacleObservation

FIXED_ITERS = 30


def far_ring(count: int) -> list:
    """count obstacles fanned out well off the lane, all in sensor range.

    The nearest two disks are the same at every count, so the occlusion
    cones and risk regions are identical across the sweep.
    """
    return [
        ObstacleObservation(
            f"ring_{i}",
            (3.0 + 0.9 * i, (1.0 if i % 2 == 0 else -1.0) * (5.0 + 0.2 * i)),
            0.5,
        )
        for i in range(count)
    ]


def pinned_solver(planner: CmpcPlanner):
    """Solver config that runs exactly FIXED_ITERS iterations."""
    return dataclasses.replace(
        planner.config.solver,
        max_iters=FIXED_ITERS,
        eps_dual=1e-12,
        xi_primal=1e-12,
        xi_consensus=1e-12,
        stall_iters=10**9,
    )


def batch_ms_per_iter(planner, cfg, count: int, batch: int) -> float:
    """CPU milliseconds per solver iteration over one batch of cold solves.

    Problem building stays outside the timed window; only plan_cycle is
    per-iteration work.
    """
    sets = []
    for _ in range(batch):
        problems, _, _ = planner._build_problems(
            RobotState(0.0, 0.0, 0.0), far_ring(count), (10.8, 0.0)
        )
        cruise = np.tile([1.8, 0.0], (planner.config.horizon_steps, 1))
        inits = [rollout(RobotState(*p.s0), cruise, p.dt) for p in problems]
        sets.append((problems, inits))
    t0 = time.process_time_ns()
    for problems, inits in sets:
        report = plan_cycle(problems, inits, cfg)
        assert report.iterations == FIXED_ITERS
    return (time.process_time_ns() - t0) / 1e6 / (batch * FIXED_ITERS)


def measure_scaling(counts, rounds: int = 12, batch: int = 6, seed: int = 0):
    """Per-count aggregate times plus the linear fit (slope, intercept, R^2)."""
    planner = CmpcPlanner()
    cfg = pinned_solver(planner)
    batch_ms_per_iter(planner, cfg, max(counts), 3)  # warm-up, discarded
    rng = random.Random(seed)
    samples = {c: [] for c in counts}
    for _ in range(rounds):
        order = list(counts)
        rng.shuffle(order)
        for c in order:
            samples[c].append(batch_ms_per_iter(planner, cfg, c, batch))
    keep = max(1, rounds // 2)
    per = [float(np.mean(sorted(samples[c])[:keep])) for c in counts]
    slope, intercept = np.polyfit(counts, per, 1)
    pred = np.polyval([slope, intercept], counts)
    arr = np.array(per)
    ss_tot = float(np.sum((arr - arr.mean()) ** 2))
    r2 = 1.0 - float(np.sum((arr - pred) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return per, float(slope), float(intercept), float(r2)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--counts", default="2,4,8,16")
    parser.add_argument("--rounds", type=int, default=12)
    parser.add_argument("--batch", type=int, default=6)
    args = parser.parse_args()

    counts = [int(tok) for tok in args.counts.split(",") if tok.strip()]
    per, slope, intercept, r2 = measure_scaling(counts, args.rounds, args.batch)
    print(f"{'N_obs':>6} {'ms/iter':>9}")
    for c, p in zip(counts, per):
        print(f"{c:>6} {p:>9.4f}")
    print(f"fit: {slope:.4f} ms/obstacle + {intercept:.3f} ms, R^2 = {r2:.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
