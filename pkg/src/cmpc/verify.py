"""Built-in self checks, runnable from a fresh install.

Five deterministic checks cover the load-bearing math: tangent geometry
identities, risk-radius formulas, analytic gradients against central
differences, consensus multiplier bookkeeping, and bit-exact replanning.
Output is one pass/fail line per check and is identical run to run; the
exit status is 0 only when every check passes.
"""

from __future__ import annotations

import math

import numpy as np

from .branch_problem import (
    ConsensusState,
    branch_objective,
    branch_objective_grad,
    obstacle_penetration,
    pack_decision,
    risk_penetration,
    unpack_decision,
)
from .consensus_solver import plan_cycle
from .kinematics import RobotState, Trajectory, rollout, step
from .occlusion import Disk, OcclusionParams, occluded_region, risk_regions, tangent_slopes
from .planner import CmpcPlanner, ObstacleObservation


def check_tangent_geometry(cases: int = 200) -> tuple[bool, str]:
    """Both tangent lines must touch their disk: point-line distance from
    the disk center equals the radius, for random viewer/disk layouts."""
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(cases):
        x = rng.uniform(0.8, 9.0)
        y = rng.uniform(-6.0, 6.0)
        r = rng.uniform(0.1, 0.9 * math.hypot(x, y))
        if x <= r + 1e-3:  # degenerate band, rejected by construction
            continue
        for m in tangent_slopes(x, y, r):
            dist = abs(m * x - y) / math.sqrt(1.0 + m * m)
            worst = max(worst, abs(dist - r))
    return worst < 1e-9, f"max |distance - radius| = {worst:.3g}"


def check_risk_radius() -> tuple[bool, str]:
    """A hidden agent at rest contributes no travel term, and the radius
    grows exactly linearly in the assumed top speed."""
    region = occluded_region(
        RobotState(0.0, 0.0, 0.0), Disk("src", 5.0, 1.0, 0.8), OcclusionParams()
    )
    rest = risk_regions(region, 0.0, 0.7)
    if any(reg.radius != 0.8 for reg in rest):
        return False, "radius at v_obs_max=0 is not the source radius"
    lo = risk_regions(region, 0.6, 0.7)
    hi = risk_regions(region, 1.2, 0.7)
    worst = max(
        abs((h.radius - l.radius) - (l.radius - r.radius))
        for h, l, r in zip(hi, lo, rest)
    )
    return worst < 1e-12, f"rest radius exact, linearity defect = {worst:.3g}"


def _random_point(rng, problem):
    """Decision point bounded away from the inequality and box kinks."""
    n = problem.n
    for _ in range(200):
        controls = np.column_stack(
            [rng.uniform(0.2, 1.6, n), rng.uniform(-0.6, 0.6, n)]
        )
        base = rollout(RobotState(*problem.s0), controls, problem.dt)
        states = base.states + rng.uniform(-0.2, 0.2, (n, 3))
        states[0] = problem.s0
        traj = Trajectory(states, controls, problem.dt)
        margins = [
            np.abs(controls[:, 0] - problem.limits.v_min).min(),
            np.abs(controls[:, 0] - problem.limits.v_max).min(),
            np.abs(controls[:, 1] - problem.limits.omega_min).min(),
            np.abs(controls[:, 1] - problem.limits.omega_max).min(),
        ]
        ok = min(margins) > 1e-3
        if ok and problem.obstacle_radii.size:
            g = obstacle_penetration(traj, problem.obstacle_centers, problem.obstacle_radii)
            ok = np.abs(g).min() > 1e-3
        if ok and problem.risk_radii.size:
            g = risk_penetration(traj, problem.risk_centers, problem.risk_radii)
            ok = np.abs(g).min() > 1e-3
        if ok:
            n_c = problem.consensus_steps
            consensus = ConsensusState(
                states[:n_c] + rng.uniform(-0.2, 0.2, (n_c, 3)),
                controls[:n_c] + rng.uniform(-0.2, 0.2, (n_c, 2)),
            )
            return traj, consensus
    raise RuntimeError("could not sample a kink-free point")


def check_gradient(instances: int = 10) -> tuple[bool, str]:
    """Analytic gradient against central differences at random points on a
    contended planning instance, all multipliers live."""
    rng = np.random.default_rng(7)
    planner = CmpcPlanner()
    problems, _, _ = planner._build_problems(
        RobotState(0.0, 0.0, 0.0),
        [ObstacleObservation("blk", (4.0, 1.6), 1.0)],
        (10.8, 0.0),
    )
    worst = 0.0
    for i in range(instances):
        problem = problems[i % len(problems)]
        problem.lam_obs[:] = rng.uniform(0.0, 2.0, problem.lam_obs.shape)
        problem.lam_risk[:] = rng.uniform(0.0, 2.0, problem.lam_risk.shape)
        problem.lam_kin[:] = rng.uniform(0.0, 2.0, problem.lam_kin.shape)
        problem.lam_cons[:] = rng.uniform(0.0, 2.0, problem.lam_cons.shape)
        traj, consensus = _random_point(rng, problem)

        def f(x):
            return branch_objective(problem, unpack_decision(problem, x), consensus)

        x0 = pack_decision(traj)
        analytic = branch_objective_grad(problem, traj, consensus)
        h = 1e-6
        numeric = np.empty_like(x0)
        for k in range(x0.size):
            e = np.zeros_like(x0)
            e[k] = h
            numeric[k] = (f(x0 + e) - f(x0 - e)) / (2.0 * h)
        err = np.linalg.norm(analytic - numeric) / max(1.0, np.linalg.norm(analytic))
        worst = max(worst, float(err))
    return worst < 1e-5, f"max relative error = {worst:.3g} over {instances} points"


def _contended_cycle():
    planner = CmpcPlanner()
    problems, _, _ = planner._build_problems(
        RobotState(0.0, 0.0, 0.0),
        [ObstacleObservation("blk", (6.0, 2.5), 0.8)],
        (10.8, 0.0),
    )
    cruise = np.tile([planner.config.weights.v_ref, 0.0], (planner.config.horizon_steps, 1))
    inits = [rollout(RobotState(*p.s0), cruise, p.dt) for p in problems]
    report = plan_cycle(problems, inits, planner.config.solver)
    return problems, report


def check_consensus_bookkeeping() -> tuple[bool, str]:
    """Multipliers on the consensus constraint are born balanced and every
    synchronous update preserves the balance, so they must sum to zero."""
    problems, _ = _contended_cycle()
    total = sum(p.lam_cons for p in problems)
    worst = float(np.abs(total).max()) if np.size(total) else 0.0
    return worst <= 1e-12, f"max |sum of consensus multipliers| = {worst:.3g}"


def check_converged_drift() -> tuple[bool, str]:
    """A short warm-started loop past an off-path obstacle must converge
    with the shared prefix inside the drift tolerance."""
    planner = CmpcPlanner()
    state = RobotState(0.0, 0.0, 0.0)
    obs = [ObstacleObservation("blk", (4.0, 6.0), 0.8)]
    last = None
    for _ in range(12):
        res = planner.plan(state, obs, (state.x + 10.8, 0.0))
        state = step(state, res.control, planner.config.dt)
        last = res.report
    drift = float(np.max(last.residuals.prefix_norms, initial=0.0))
    ok = last.converged and drift <= 0.1
    return ok, f"converged={last.converged} with prefix drift {drift:.3g}"


def check_replan_deterministic() -> tuple[bool, str]:
    _, first = _contended_cycle()
    _, second = _contended_cycle()
    same = all(
        np.array_equal(a.states, b.states) and np.array_equal(a.controls, b.controls)
        for a, b in zip(first.trajectories, second.trajectories)
    ) and first.iterations == second.iterations
    return same, (
        f"two cold solves identical over {first.iterations} iterations"
        if same
        else "solves diverged"
    )


CHECKS = (
    ("tangent geometry", check_tangent_geometry),
    ("risk radius formula", check_risk_radius),
    ("objective gradient", check_gradient),
    ("consensus bookkeeping", check_consensus_bookkeeping),
    ("warm loop convergence", check_converged_drift),
    ("deterministic replan", check_replan_deterministic),
)


def main() -> int:
    failures = 0
    for name, fn in CHECKS:
        ok, detail = fn()
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    print(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return 0 if failures == 0 else 1


if __name__ == "__main__":
    raise SystemExit(main())
