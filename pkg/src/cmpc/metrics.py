"""Consistency metrics and the baseline experiment driver.

The two headline quantities are windowed lateral-velocity range (reported
as a variance-style column but carrying velocity units, so it is a
peak-to-peak measure over 1 s windows) and the peak lateral acceleration
estimated by a first difference quotient. On top of those sits a small
batch runner that evaluates named planner variants over seed lists and
emits a results table.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .planner import PlannerConfig
from .world import Scenario, SimLog, path_tangent, run_episode

WINDOW_SEC = 1.0

# branch speeds (None = neglect hypothesis) and consensus length per variant
BASELINE_KINDS = {
    "cmpc": ((None, 0.5, 1.0), 2.0),
    "cmpc_0": ((None, 0.5, 1.0), 0.0),
    "single_hyp_no_risk": ((None,), 0.0),
    "single_hyp_risk": ((1.0,), 0.0),
}

RESULTS_COLUMNS = (
    "Algorithm",
    "Scenario",
    "Seed",
    "Collision",
    "Max Lat. Vel. Variance (m/s)",
    "Peak Lat. Acc. (m/s^2)",
    "Avg. Solving Time (ms)",
    "Duration (s)",
    "Converged Ratio",
    "Reached Goal",
)

SWEEP_COLUMNS = (
    "Consensus Segment Length (s)",
    "Max Lat. Vel. Variance (m/s)",
    "Peak Lat. Acc. (m/s^2)",
    "Avg. Solving Time (ms)",
    "Collisions",
    "Episodes",
)


def lateral_velocity(states, controls, path=None) -> np.ndarray:
    """Velocity component across the local guide-path direction.

    v_lat(k) = v_k * sin(theta_k - theta_path), with theta_path taken from
    the tangent of the path segment nearest each state. Without a path the
    reference direction is the x axis.
    """
    states = np.asarray(states, dtype=float).reshape(-1, 3)
    controls = np.asarray(controls, dtype=float).reshape(-1, 2)
    if len(states) != len(controls):
        raise ValueError("states and controls must pair up")
    if path is None:
        tangents = np.zeros(len(states))
    else:
        tangents = np.array([path_tangent(path, (x, y)) for x, y, _ in states])
    return controls[:, 0] * np.sin(states[:, 2] - tangents)


def consistency_metrics(v_lat, dt: float) -> tuple[float, float]:
    """(max windowed peak-to-peak of v_lat, peak |dv_lat|/dt).

    The window spans WINDOW_SEC seconds inclusive of both endpoints; series
    shorter than a window are scored over their whole length.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    v = np.asarray(v_lat, dtype=float).ravel()
    if v.size == 0:
        return 0.0, 0.0
    win = min(int(round(WINDOW_SEC / dt)) + 1, v.size)
    windows = sliding_window_view(v, win)
    ptp = float((windows.max(axis=1) - windows.min(axis=1)).max())
    acc = float(np.abs(np.diff(v)).max() / dt) if v.size > 1 else 0.0
    return ptp, acc


@dataclass
class MetricsReport:
    """Episode-level summary for one (variant, scenario, seed) run."""

    collision: bool
    max_lat_vel_variance: float
    peak_lat_acc: float
    avg_solve_ms: float
    duration_s: float
    reached_goal: bool = False
    converged_ratio: float = 0.0
    planner_failures: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in (
            "max_lat_vel_variance",
            "peak_lat_acc",
            "avg_solve_ms",
            "duration_s",
            "converged_ratio",
        ):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} cannot be negative")


def episode_metrics(log: SimLog) -> MetricsReport:
    """Score one finished episode.

    Solve time averages over the planning cycles that actually ran the
    solver; cycles where the planner gave up contribute the failure count
    instead.
    """
    ptp, acc = consistency_metrics(log.lateral_velocities, log.dt)
    solve = [r["solve_ms"] for r in log.records if not r["planner_failure"]]
    conv = log.converged_flags
    return MetricsReport(
        collision=log.collided,
        max_lat_vel_variance=ptp,
        peak_lat_acc=acc,
        avg_solve_ms=float(np.mean(solve)) if solve else 0.0,
        duration_s=log.duration,
        reached_goal=log.reached_goal,
        converged_ratio=float(conv.mean()) if conv.size else 0.0,
        planner_failures=log.planner_failures,
        seed=log.seed,
    )


def baseline_config(kind: str, base: PlannerConfig | None = None) -> PlannerConfig:
    """Planner configuration for a named variant.

    cmpc is the full method, cmpc_0 drops the consensus segment, and the
    single-hypothesis variants plan one branch that either ignores risk
    regions entirely (best case) or pins them to the worst-case obstacle
    speed of 1 m/s.
    """
    try:
        speeds, consensus = BASELINE_KINDS[kind]
    except KeyError:
        raise ValueError(
            f"unknown baseline kind {kind!r}, expected one of "
            + ", ".join(sorted(BASELINE_KINDS))
        ) from None
    base = base if base is not None else PlannerConfig()
    return dataclasses.replace(base, branch_speeds=speeds, consensus_sec=consensus)


def _run_one(scenario: Scenario, config: PlannerConfig, seed: int, kind: str,
             log_dir) -> MetricsReport:
    log = run_episode(scenario, config, seed)
    if log_dir is not None:
        log.write(log_dir, stem=f"{kind}_{scenario.name}_seed{seed}")
    return episode_metrics(log)


@dataclass
class AggregateReport:
    """Seed-aggregated metrics for one (variant, scenario) pair."""

    kind: str
    scenario: str
    reports: list[MetricsReport]

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.reports]

    @property
    def collision(self) -> bool:
        return any(r.collision for r in self.reports)

    @property
    def collisions(self) -> int:
        return sum(r.collision for r in self.reports)

    def stat(self, name: str) -> dict:
        vals = [getattr(r, name) for r in self.reports]
        return {
            "mean": float(np.mean(vals)),
            "min": float(np.min(vals)),
            "max": float(np.max(vals)),
        }

    def mean(self, name: str) -> float:
        return float(np.mean([getattr(r, name) for r in self.reports]))

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "scenario": self.scenario,
            "seeds": self.seeds,
            "episodes": len(self.reports),
            "collision": self.collision,
            "collisions": self.collisions,
            "reached_goal": sum(r.reached_goal for r in self.reports),
            "planner_failures": sum(r.planner_failures for r in self.reports),
            "max_lat_vel_variance": self.stat("max_lat_vel_variance"),
            "peak_lat_acc": self.stat("peak_lat_acc"),
            "avg_solve_ms": self.stat("avg_solve_ms"),
            "duration_s": self.stat("duration_s"),
            "converged_ratio": self.stat("converged_ratio"),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def _run_many(
    config: PlannerConfig, label: str, scenario: Scenario, seeds, jobs, log_dir
) -> AggregateReport:
    seeds = list(seeds)
    args = [(scenario, config, s, label, log_dir) for s in seeds]
    if jobs > 1 and len(seeds) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_one_star, args))
    else:
        reports = [_run_one(*a) for a in args]
    return AggregateReport(kind=label, scenario=scenario.name, reports=reports)


def _run_one_star(args):
    return _run_one(*args)


def run_baseline(
    kind: str,
    scenario: Scenario,
    seeds,
    base: PlannerConfig | None = None,
    jobs: int = 1,
    log_dir=None,
) -> AggregateReport:
    """Run one planner variant over a list of seeds and aggregate.

    Episodes are independent, so seeds can fan out over worker processes;
    results keep seed order either way.
    """
    return _run_many(baseline_config(kind, base), kind, scenario, seeds, jobs, log_dir)


def sweep_consensus(
    scenario: Scenario,
    seeds,
    lengths=(0.0, 1.0, 2.0, 5.0),
    base: PlannerConfig | None = None,
    jobs: int = 1,
    log_dir=None,
) -> list[tuple[float, AggregateReport]]:
    """Consensus-length ablation: the 0 s cell is exactly the cmpc_0 variant,
    every other cell is full cmpc with the consensus length overridden."""
    out = []
    for length in lengths:
        kind = "cmpc_0" if length == 0.0 else "cmpc"
        cfg = baseline_config(kind, base)
        if length > 0.0:
            cfg = dataclasses.replace(cfg, consensus_sec=float(length))
        agg = _run_many(cfg, f"tc{length:g}s", scenario, seeds, jobs, log_dir)
        out.append((float(length), agg))
    return out


def results_csv(aggregates) -> str:
    """Per-seed results table, one row per episode."""
    lines = [",".join(RESULTS_COLUMNS)]
    for agg in aggregates:
        for r in agg.reports:
            lines.append(
                f"{agg.kind},{agg.scenario},{r.seed},"
                f"{'YES' if r.collision else 'NO'},"
                f"{r.max_lat_vel_variance:.6f},{r.peak_lat_acc:.6f},"
                f"{r.avg_solve_ms:.3f},{r.duration_s:.3f},"
                f"{r.converged_ratio:.4f},{int(r.reached_goal)}"
            )
    return "\n".join(lines) + "\n"


def sweep_csv(rows) -> str:
    """Ablation table, one row per consensus length, seed-averaged."""
    lines = [",".join(SWEEP_COLUMNS)]
    for length, agg in rows:
        lines.append(
            f"{length:g},{agg.mean('max_lat_vel_variance'):.6f},"
            f"{agg.mean('peak_lat_acc'):.6f},{agg.mean('avg_solve_ms'):.3f},"
            f"{agg.collisions},{len(agg.reports)}"
        )
    return "\n".join(lines) + "\n"


def write_reports(aggregates, out_dir) -> list[Path]:
    """results.csv plus one JSON aggregate per (variant, scenario)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "results.csv"]
    written[0].write_text(results_csv(aggregates))
    for agg in aggregates:
        p = out_dir / f"{agg.kind}_{agg.scenario}.json"
        p.write_text(agg.to_json())
        written.append(p)
    return written
