"""Alternating solver that couples the hypothesis branches.

Each outer iteration minimizes every branch objective for fixed duals and
fixed shared prefix (damped Newton on a Gauss-Newton model), then performs
the gradient-ascent dual updates, re-averages the shared prefix across
branches and updates the coupling duals. Branches are independent inside an
iteration, so they can run on a thread pool; all reductions happen in fixed
branch order which keeps results bit-identical for any worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .branch_problem import (
    BranchProblem,
    ConsensusState,
    branch_objective,
    branch_objective_grad,
    consensus_residual,
    dynamics_residual,
    obstacle_penetration,
    pack_decision,
    risk_penetration,
    unpack_decision,
)
from .kinematics import Trajectory, wrap_angle


class SolverDivergedError(RuntimeError):
    """A branch produced a non-finite objective and cannot continue."""


class PlannerFailureError(RuntimeError):
    """No branch produced a usable trajectory this cycle."""


@dataclass(frozen=True)
class NewtonConfig:
    max_iters: int = 30
    grad_tol: float = 0.05
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 10.0
    damping_max: float = 1e8
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    alpha_min: float = 1e-6
    # largest per-coordinate move away from the warm start in one solve; the
    # objective is unbounded below once inequality duals outgrow the cost
    # curvature (the linear dual term has no quadratic backstop on the
    # satisfied side), so the search must stay local to the warm start
    trust_radius: float = 8.0
    # relative stop: quit at inexact_factor times the entry gradient norm
    # (never below grad_tol). Inside the alternating loop the dual updates
    # perturb the minimum every iteration, so polishing each subproblem to
    # grad_tol buys nothing; 0 solves to grad_tol exactly
    inexact_factor: float = 0.0


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 300
    eps_dual: float = 0.15  # stationarity threshold per branch
    xi_primal: float = 0.1  # branch-to-consensus deviation threshold
    xi_consensus: float = 0.1  # consensus drift threshold between iterations
    # give up on the cycle when the best combined score has not improved for
    # this many iterations; fully blocked scenes make the dual ascent cycle
    # between penetrating and fleeing iterates and burning the whole budget
    # on that adds seconds of wall time for no better answer
    stall_iters: int = 25
    workers: int = 1
    newton: NewtonConfig = field(
        default_factory=lambda: NewtonConfig(max_iters=12, inexact_factor=0.25)
    )


@dataclass
class Residuals:
    grad_norms: np.ndarray  # (n_z,)
    prefix_norms: np.ndarray  # (n_z,)
    consensus_change: float


@dataclass
class SolveReport:
    trajectories: list[Trajectory]
    consensus: ConsensusState
    applied_control: np.ndarray
    iterations: int
    converged: bool
    residuals: Residuals
    wall_ms: float


def check_termination(residuals: Residuals, cfg: SolverConfig) -> bool:
    """Non-strict comparison of all three residual groups."""
    return bool(
        np.max(residuals.grad_norms, initial=0.0) <= cfg.eps_dual
        and np.max(residuals.prefix_norms, initial=0.0) <= cfg.xi_primal
        and residuals.consensus_change <= cfg.xi_consensus
    )


class HessianAssembler:
    """Gauss-Newton model Hessian for one branch problem.

    The quadratic cost pieces, the consensus diagonal and the constant
    entries of the kinematic J^T J block pattern never change, so they are
    assembled once into a base matrix; each iterate only rewrites the
    heading-dependent entries and the active inequality and box blocks.
    The result is positive semidefinite by construction (all constraint
    curvature is dropped), so a damped copy admits a Cholesky solve.
    """

    def __init__(self, problem: BranchProblem):
        self.problem = problem
        n, dt = problem.n, problem.dt
        dim = problem.n_free
        self.dim = dim
        w = problem.weights
        base = np.zeros((dim, dim))

        def u_idx(k):
            return 2 * k

        def s_idx(k):  # free states only, k >= 1
            return 2 * n + 3 * (k - 1)

        # smoothness: tridiagonal in each control channel, the first control
        # also pairs with the previous applied control
        cacc = 2.0 * w.w_acc / dt**2
        for ch in (0, 1):
            for k in range(n):
                base[u_idx(k) + ch, u_idx(k) + ch] += cacc * (2.0 if k < n - 1 else 1.0)
                if k < n - 1:
                    base[u_idx(k) + ch, u_idx(k + 1) + ch] -= cacc
                    base[u_idx(k + 1) + ch, u_idx(k) + ch] -= cacc
        # reference speed tracking on v
        for k in range(n):
            base[u_idx(k), u_idx(k)] += 2.0 * w.w_vel
        # terminal guide pull on the last position
        gi = s_idx(n - 1)
        base[gi, gi] += 2.0 * w.w_guide
        base[gi + 1, gi + 1] += 2.0 * w.w_guide
        # consensus proximal diagonal
        rc = 2.0 * problem.rho_cons
        for k in range(problem.consensus_steps):
            base[u_idx(k), u_idx(k)] += rc
            base[u_idx(k) + 1, u_idx(k) + 1] += rc
            if k >= 1:
                for d in range(3):
                    base[s_idx(k) + d, s_idx(k) + d] += rc
        # kinematic J^T J, constant part. For residual row k the Jacobian
        # blocks are -A_k (state k), -B_k (control k), I (state k+1), and
        # A^T B = B, B^T B = dt^2 I hold exactly for the unicycle.
        rk = 2.0 * problem.rho_kin
        for k in range(n - 1):
            i1 = s_idx(k + 1)
            for d in range(3):
                base[i1 + d, i1 + d] += rk  # I block
            iu = u_idx(k)
            base[iu, iu] += rk * dt**2
            base[iu + 1, iu + 1] += rk * dt**2
            base[iu + 1, i1 + 2] += -rk * dt  # -B^T, omega row
            base[i1 + 2, iu + 1] += -rk * dt
            if k >= 1:
                i0 = s_idx(k)
                # A^T A constant part: identity plus the (2,2) constant 1
                for d in range(3):
                    base[i0 + d, i0 + d] += rk
                # A^T B constant entry (omega column)
                base[i0 + 2, iu + 1] += rk * dt
                base[iu + 1, i0 + 2] += rk * dt
                # -A^T block diagonal
                for d in range(3):
                    base[i0 + d, i1 + d] += -rk
                    base[i1 + d, i0 + d] += -rk
        self.base = base

        # flat index grids for the heading-dependent entries, per step k
        flat = lambda r, c: r * dim + c
        ks = np.arange(n - 1)
        iu = 2 * ks
        i1 = 2 * n + 3 * ks  # state k+1 offset
        # -B^T at (u_k, s_{k+1}): entries (v_k row, x/y cols)
        self.idx_bt_x = flat(iu, i1)
        self.idx_bt_y = flat(iu, i1 + 1)
        ks1 = np.arange(1, n - 1)
        iu1 = 2 * ks1
        i0 = 2 * n + 3 * (ks1 - 1)
        i11 = 2 * n + 3 * ks1
        # A^T A heading entries at (s_k, s_k)
        self.idx_aa_xt = flat(i0, i0 + 2)
        self.idx_aa_yt = flat(i0 + 1, i0 + 2)
        self.idx_aa_tt = flat(i0 + 2, i0 + 2)
        # A^T B = B at (s_k, u_k): (x, v) and (y, v)
        self.idx_ab_x = flat(i0, iu1)
        self.idx_ab_y = flat(i0 + 1, iu1)
        # -A^T at (s_k, s_{k+1}): theta row couples to x and y columns
        self.idx_at_x = flat(i0 + 2, i11)
        self.idx_at_y = flat(i0 + 2, i11 + 1)
        self.n = n

    def assemble(self, traj: Trajectory) -> np.ndarray:
        p = self.problem
        n, dt = self.n, p.dt
        h = self.base.copy()
        hf = h.ravel()
        theta = traj.states[:-1, 2]
        v = traj.controls[:-1, 0]
        ct, st = np.cos(theta), np.sin(theta)
        a = -v * dt * st  # dx/dtheta in the step map
        b = v * dt * ct
        rk = 2.0 * p.rho_kin

        def sym_add(idx, vals):
            hf[idx] += vals
            rows, cols = idx // self.dim, idx % self.dim
            hf[cols * self.dim + rows] += vals

        sym_add(self.idx_bt_x, -rk * dt * ct)
        sym_add(self.idx_bt_y, -rk * dt * st)
        if n > 2:
            sym_add(self.idx_aa_xt, rk * a[1:])
            sym_add(self.idx_aa_yt, rk * b[1:])
            hf[self.idx_aa_tt] += rk * (a[1:] ** 2 + b[1:] ** 2)
            sym_add(self.idx_ab_x, rk * dt * ct[1:])
            sym_add(self.idx_ab_y, rk * dt * st[1:])
            sym_add(self.idx_at_x, -rk * a[1:])
            sym_add(self.idx_at_y, -rk * b[1:])

        # active clearance penalties: 8 rho d d^T on the position block
        for centers, radii, rho, pen in (
            (p.obstacle_centers, p.obstacle_radii, p.rho_obs, obstacle_penetration),
            (p.risk_centers, p.risk_radii, p.rho_risk, risk_penetration),
        ):
            if radii.size == 0:
                continue
            g = pen(traj, centers, radii)
            mask = g > 0.0
            if not mask.any():
                continue
            diff = (
                traj.positions[:, None, :] - centers
                if centers.ndim == 3
                else traj.positions[:, None, :] - centers[None, :, :]
            )
            m = np.einsum("kj,kja,kjb->kab", 8.0 * rho * mask, diff, diff)
            for k in range(1, n):
                if m[k].any():
                    i = 2 * n + 3 * (k - 1)
                    h[i : i + 2, i : i + 2] += m[k]

        # soft control box, active side only
        wbox = 10.0 * p.weights.w_acc
        for ch, lo, hi in (
            (0, p.limits.v_min, p.limits.v_max),
            (1, p.limits.omega_min, p.limits.omega_max),
        ):
            vals = traj.controls[:, ch]
            active = (vals > hi) | (vals < lo)
            for k in np.nonzero(active)[0]:
                h[2 * k + ch, 2 * k + ch] += 2.0 * wbox
        return h


def solve_branch(
    problem: BranchProblem,
    init: Trajectory,
    consensus: ConsensusState,
    cfg: NewtonConfig = NewtonConfig(),
    assembler: HessianAssembler | None = None,
) -> Trajectory:
    """Approximately minimize one branch objective from a warm start.

    Damped Newton on the Gauss-Newton model with a backtracking line
    search; the damping weight drops after accepted steps and grows when
    the model step fails to produce decrease. Returns the best iterate
    found; raises SolverDivergedError when the objective is not finite.
    """
    asm = assembler if assembler is not None else HessianAssembler(problem)
    start = init.copy()
    start.states[:, 2] = wrap_angle(start.states[:, 2])
    x = pack_decision(start)
    anchor = x.copy()
    traj = unpack_decision(problem, x)
    val = branch_objective(problem, traj, consensus)
    if not np.isfinite(val):
        raise SolverDivergedError("non-finite objective at the warm start")
    mu = cfg.damping_init
    eye = np.eye(problem.n_free)
    tol = cfg.grad_tol
    # exploratory steps may overflow; non-finite candidates are rejected by
    # the line search, so the warnings carry no information
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(cfg.max_iters):
            grad = branch_objective_grad(problem, traj, consensus)
            gnorm = float(np.linalg.norm(grad))
            if it == 0 and cfg.inexact_factor > 0.0:
                tol = max(cfg.grad_tol, cfg.inexact_factor * gnorm)
            if gnorm <= tol:
                break
            hess = asm.assemble(traj)
            improved = False
            while mu <= cfg.damping_max:
                try:
                    cf = cho_factor(hess + mu * eye, lower=True, check_finite=False)
                except LinAlgError:
                    mu *= cfg.damping_up
                    continue
                step = cho_solve(cf, -grad, check_finite=False)
                slope = float(grad @ step)
                if not np.isfinite(slope):
                    mu *= cfg.damping_up
                    continue
                moving = step != 0.0
                if not moving.any():
                    mu *= cfg.damping_up
                    continue
                # largest in-ball fraction of the step around the warm start
                room = (
                    anchor[moving]
                    + np.copysign(cfg.trust_radius, step[moving])
                    - x[moving]
                ) / step[moving]
                alpha = min(1.0, float(room.min()))
                if alpha < cfg.alpha_min:
                    mu *= cfg.damping_up
                    continue
                while alpha >= cfg.alpha_min:
                    cand_x = x + alpha * step
                    cand = unpack_decision(problem, cand_x)
                    cand_val = branch_objective(problem, cand, consensus)
                    if np.isfinite(cand_val) and (
                        cand_val <= val + cfg.armijo_c1 * alpha * slope
                    ):
                        break
                    alpha *= cfg.backtrack
                else:
                    mu *= cfg.damping_up
                    continue
                # accepted: keep the heading decision variables wrapped, the
                # objective is periodic in each of them
                cand.states[:, 2] = wrap_angle(cand.states[:, 2])
                x = pack_decision(cand)
                traj, val = unpack_decision(problem, x), cand_val
                mu = max(mu / cfg.damping_down, 1e-12)
                improved = True
                break
            if not improved:
                break
    return traj


def update_branch_duals(problem: BranchProblem, traj: Trajectory) -> None:
    """Gradient-ascent dual update in place.

    Inequality duals move by twice the penalty-weighted residual and are
    clipped at zero; rows before a disk's first enforced step stay at zero.
    The equality duals are unconstrained.
    """
    if problem.obstacle_radii.size:
        g = obstacle_penetration(traj, problem.obstacle_centers, problem.obstacle_radii)
        np.maximum(0.0, problem.lam_obs + 2.0 * problem.rho_obs * g, out=problem.lam_obs)
        problem.lam_obs *= problem.obstacle_mask
    if problem.risk_radii.size:
        g = risk_penetration(traj, problem.risk_centers, problem.risk_radii)
        np.maximum(0.0, problem.lam_risk + 2.0 * problem.rho_risk * g, out=problem.lam_risk)
        problem.lam_risk *= problem.risk_mask
    problem.lam_kin += 2.0 * problem.rho_kin * dynamics_residual(traj)


def consensus_average(trajs: list[Trajectory], n_c: int) -> ConsensusState:
    """Branch average of the shared prefix, states and controls.

    Headings are averaged as offsets around their circular mean, which is
    branch-cut safe and keeps the coupling dual increments summing to zero.
    """
    if n_c == 0:
        return ConsensusState.empty()
    states = np.stack([t.states[:n_c] for t in trajs])
    controls = np.stack([t.controls[:n_c] for t in trajs])
    mean_states = states.mean(axis=0)
    th = states[:, :, 2]
    anchor = np.arctan2(np.sin(th).mean(axis=0), np.cos(th).mean(axis=0))
    mean_states[:, 2] = wrap_angle(anchor + wrap_angle(th - anchor[None, :]).mean(axis=0))
    return ConsensusState(mean_states, controls.mean(axis=0))


def update_consensus(
    problems: list[BranchProblem],
    trajs: list[Trajectory],
    include: list[bool] | None = None,
) -> ConsensusState:
    """Re-average the shared prefix and move every coupling dual toward its
    branch deviation. Mutates each problem's lam_cons.

    include masks branches out of both the average and the dual step, used
    for branches whose trajectories are unusable this cycle.
    """
    n_c = problems[0].consensus_steps
    if include is None:
        include = [True] * len(problems)
    used = [t for t, ok in zip(trajs, include) if ok]
    consensus = consensus_average(used, n_c)
    if n_c:
        for problem, traj, ok in zip(problems, trajs, include):
            if ok:
                problem.lam_cons += 2.0 * problem.rho_cons * consensus_residual(
                    traj, consensus
                )
    return consensus


def _consensus_change(old: ConsensusState, new: ConsensusState) -> float:
    if len(old) == 0:
        return 0.0
    d = new.stacked() - old.stacked()
    d[:, 2] = wrap_angle(d[:, 2])
    return float(np.linalg.norm(d))


def _worst_penetration(
    problems: list[BranchProblem], trajs: list[Trajectory], alive: list[bool]
) -> float:
    worst = 0.0
    for p, t, ok in zip(problems, trajs, alive):
        if not ok:
            continue
        if p.obstacle_radii.size:
            g = obstacle_penetration(t, p.obstacle_centers, p.obstacle_radii)
            worst = max(worst, float((g * p.obstacle_mask).max()))
        if p.risk_radii.size:
            g = risk_penetration(t, p.risk_centers, p.risk_radii)
            worst = max(worst, float((g * p.risk_mask).max()))
    return worst


def _dual_snapshot(problems: list[BranchProblem]) -> list[dict[str, np.ndarray]]:
    return [
        {
            "lam_obs": p.lam_obs.copy(),
            "lam_risk": p.lam_risk.copy(),
            "lam_kin": p.lam_kin.copy(),
            "lam_cons": p.lam_cons.copy(),
        }
        for p in problems
    ]


def plan_cycle(
    problems: list[BranchProblem],
    inits: list[Trajectory],
    cfg: SolverConfig = SolverConfig(),
    consensus0: ConsensusState | None = None,
) -> SolveReport:
    """Run the alternating loop over all branches until the residual
    thresholds hold or the iteration budget runs out.

    The applied control is the first consensus control; without a consensus
    prefix it falls back to the fixed-order branch average of first
    controls. Branches whose inner solve diverges keep their previous
    trajectory for the iteration; branches with a non-finite trajectory are
    excluded from the consensus average so they cannot poison the rest. If
    no branch is usable there is nothing to apply and PlannerFailureError
    is raised.

    A cycle that exhausts the iteration budget returns the iterate with the
    best combined score of residuals and worst constraint penetration seen
    along the way, duals included, rather than whatever the last iteration
    happened to leave behind. On contended scenes the dual ascent can
    oscillate and the final iterate may be one of the bad swings.
    """
    t0 = time.perf_counter()
    n_z = len(problems)
    if n_z == 0 or len(inits) != n_z:
        raise ValueError("need one init trajectory per branch problem")
    n_c = problems[0].consensus_steps
    if any(p.consensus_steps != n_c for p in problems):
        raise ValueError("branches must share the consensus prefix length")
    trajs = [t.copy() for t in inits]

    def finite(t: Trajectory) -> bool:
        return bool(np.isfinite(t.states).all() and np.isfinite(t.controls).all())

    alive = [finite(t) for t in trajs]
    if not any(alive):
        raise PlannerFailureError("no branch received a usable warm start")
    if consensus0 is not None:
        consensus = consensus0.copy()
    else:
        consensus = consensus_average([t for t, ok in zip(trajs, alive) if ok], n_c)
    assemblers = [HessianAssembler(p) for p in problems]

    def run_branch(z: int) -> tuple[Trajectory, bool]:
        if not alive[z]:
            return trajs[z], False
        try:
            traj = solve_branch(
                problems[z], trajs[z], consensus, cfg.newton, assemblers[z]
            )
        except SolverDivergedError:
            return trajs[z], False
        update_branch_duals(problems[z], traj)
        return traj, True

    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    iterations = 0
    converged = False
    residuals = Residuals(np.zeros(n_z), np.zeros(n_z), 0.0)
    best_score = np.inf
    best = None
    since_best = 0
    try:
        for iterations in range(1, cfg.max_iters + 1):
            if pool is not None:
                results = list(pool.map(run_branch, range(n_z)))
            else:
                results = [run_branch(z) for z in range(n_z)]
            trajs = [r[0] for r in results]
            solved = [ok for _, ok in results]
            if iterations == 1 and not any(solved):
                raise PlannerFailureError("every branch diverged at the warm start")
            new_consensus = update_consensus(problems, trajs, alive)
            change = _consensus_change(consensus, new_consensus)
            consensus = new_consensus
            grad_norms = np.array(
                [
                    np.linalg.norm(branch_objective_grad(p, t, consensus))
                    if ok
                    else 0.0
                    for p, t, ok in zip(problems, trajs, alive)
                ]
            )
            prefix_norms = np.array(
                [
                    np.linalg.norm(consensus_residual(t, consensus)) if ok else 0.0
                    for t, ok in zip(trajs, alive)
                ]
            )
            residuals = Residuals(grad_norms, prefix_norms, change)
            if check_termination(residuals, cfg):
                converged = True
                break
            score = max(
                np.max(grad_norms, initial=0.0) / cfg.eps_dual,
                np.max(prefix_norms, initial=0.0) / cfg.xi_primal,
                change / cfg.xi_consensus,
                _worst_penetration(problems, trajs, alive) / 1e-2,
            )
            if np.isfinite(score) and score < best_score:
                best_score = score
                since_best = 0
                best = (
                    [t.copy() for t in trajs],
                    consensus.copy(),
                    _dual_snapshot(problems),
                    residuals,
                )
            else:
                since_best += 1
                if since_best >= cfg.stall_iters:
                    break
    finally:
        if pool is not None:
            pool.shutdown(wait=False)

    if not converged and best is not None:
        trajs, consensus, duals, residuals = best
        for p, d in zip(problems, duals):
            p.lam_obs = d["lam_obs"]
            p.lam_risk = d["lam_risk"]
            p.lam_kin = d["lam_kin"]
            p.lam_cons = d["lam_cons"]

    if n_c:
        applied = consensus.controls[0].copy()
    else:
        firsts = [t.controls[0] for t, ok in zip(trajs, alive) if ok]
        applied = np.mean(np.stack(firsts), axis=0)
    return SolveReport(
        trajectories=trajs,
        consensus=consensus,
        applied_control=applied,
        iterations=iterations,
        converged=converged,
        residuals=residuals,
        wall_ms=(time.perf_counter() - t0) * 1e3,
    )
