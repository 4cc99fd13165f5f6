"""Per-branch trajectory optimization problem.

One branch owns a full-horizon trajectory, a risk-region set for its
hypothesis, dual variables for every constraint family and the fixed
penalty weights. The module evaluates the running cost, the constraint
residuals and the augmented Lagrangian together with its analytic gradient
in the packed decision vector

    x = [u_0 .. u_{N-1}, s_1 .. s_{N-1}]

with s_0 pinned to the measured state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinematics import Trajectory, step_array, wrap_angle
from .occlusion import RiskRegionConfig

CONSENSUS_DIMS = 5  # (x, y, theta, v, omega) per shared step


@dataclass(frozen=True)
class CostWeights:
    w_acc: float = 1.8
    w_vel: float = 5.0
    w_guide: float = 3.5
    v_ref: float = 1.8
    guide_point: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class ControlLimits:
    v_min: float = -0.5
    v_max: float = 2.5
    omega_min: float = -1.5
    omega_max: float = 1.5

    def clamp(self, control: np.ndarray) -> np.ndarray:
        out = np.asarray(control, dtype=float).copy()
        out[..., 0] = np.clip(out[..., 0], self.v_min, self.v_max)
        out[..., 1] = np.clip(out[..., 1], self.omega_min, self.omega_max)
        return out


@dataclass
class ConsensusState:
    """Shared prefix all branches are pulled toward (states and controls)."""

    states: np.ndarray  # (N_c, 3)
    controls: np.ndarray  # (N_c, 2)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 3)
        self.controls = np.asarray(self.controls, dtype=float).reshape(-1, 2)
        if self.states.shape[0] != self.controls.shape[0]:
            raise ValueError("consensus states and controls must align")

    def __len__(self) -> int:
        return int(self.states.shape[0])

    @classmethod
    def empty(cls) -> "ConsensusState":
        return cls(np.zeros((0, 3)), np.zeros((0, 2)))

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.states, self.controls], axis=1)

    def copy(self) -> "ConsensusState":
        return ConsensusState(self.states.copy(), self.controls.copy())


@dataclass
class BranchProblem:
    """All fixed data and dual state for one hypothesis branch."""

    s0: np.ndarray
    n: int
    dt: float
    weights: CostWeights
    limits: ControlLimits
    prev_control: np.ndarray
    obstacle_centers: np.ndarray  # (n, n_obs, 2), predicted per step
    obstacle_radii: np.ndarray  # (n_obs,)
    risk_centers: np.ndarray  # (n_risk, 2), fixed over the horizon
    risk_radii: np.ndarray  # (n_risk,)
    obstacle_start: np.ndarray = None  # (n_obs,) first enforced step
    risk_start: np.ndarray = None  # (n_risk,) first enforced step
    consensus_steps: int = 0
    rho_obs: float = 1.0
    rho_risk: float = 1.0
    rho_kin: float = 1.0
    rho_cons: float = 1.0
    lam_obs: np.ndarray = field(default=None)
    lam_risk: np.ndarray = field(default=None)
    lam_kin: np.ndarray = field(default=None)
    lam_cons: np.ndarray = field(default=None)

    def __post_init__(self):
        self.s0 = np.asarray(self.s0, dtype=float).reshape(3)
        self.prev_control = np.asarray(self.prev_control, dtype=float).reshape(2)
        if self.n < 2:
            raise ValueError("horizon must hold at least two steps")
        if not 0 <= self.consensus_steps <= self.n:
            raise ValueError("consensus prefix cannot exceed the horizon")
        self.obstacle_centers = np.asarray(self.obstacle_centers, dtype=float).reshape(
            self.n, -1, 2
        )
        self.obstacle_radii = np.asarray(self.obstacle_radii, dtype=float).ravel()
        self.risk_centers = np.asarray(self.risk_centers, dtype=float).reshape(-1, 2)
        self.risk_radii = np.asarray(self.risk_radii, dtype=float).ravel()
        if self.obstacle_centers.shape[1] != self.obstacle_radii.size:
            raise ValueError("obstacle tracks and radii disagree")
        if self.risk_centers.shape[0] != self.risk_radii.size:
            raise ValueError("risk centers and radii disagree")
        n, n_c = self.n, self.consensus_steps
        if self.obstacle_start is None:
            self.obstacle_start = np.zeros(self.obstacle_radii.size, dtype=int)
        if self.risk_start is None:
            self.risk_start = np.zeros(self.risk_radii.size, dtype=int)
        self.obstacle_start = np.asarray(self.obstacle_start, dtype=int).ravel()
        self.risk_start = np.asarray(self.risk_start, dtype=int).ravel()
        if self.obstacle_start.size != self.obstacle_radii.size:
            raise ValueError("obstacle start steps and radii disagree")
        if self.risk_start.size != self.risk_radii.size:
            raise ValueError("risk start steps and radii disagree")
        steps = np.arange(n)[:, None]
        self.obstacle_mask = (steps >= self.obstacle_start[None, :]).astype(float)
        self.risk_mask = (steps >= self.risk_start[None, :]).astype(float)
        if self.lam_obs is None:
            self.lam_obs = np.zeros((n, self.obstacle_radii.size))
        if self.lam_risk is None:
            self.lam_risk = np.zeros((n, self.risk_radii.size))
        if self.lam_kin is None:
            self.lam_kin = np.zeros((n - 1, 3))
        if self.lam_cons is None:
            self.lam_cons = np.zeros((n_c, CONSENSUS_DIMS))
        self.lam_obs = np.asarray(self.lam_obs, dtype=float).reshape(
            n, self.obstacle_radii.size
        )
        self.lam_risk = np.asarray(self.lam_risk, dtype=float).reshape(
            n, self.risk_radii.size
        )
        self.lam_kin = np.asarray(self.lam_kin, dtype=float).reshape(n - 1, 3)
        self.lam_cons = np.asarray(self.lam_cons, dtype=float).reshape(
            n_c, CONSENSUS_DIMS
        )

    @property
    def n_free(self) -> int:
        """Length of the packed decision vector."""
        return 2 * self.n + 3 * (self.n - 1)

    @classmethod
    def build(
        cls,
        s0,
        config: RiskRegionConfig,
        obstacle_centers,
        obstacle_radii,
        weights: CostWeights,
        limits: ControlLimits,
        n: int,
        dt: float,
        consensus_steps: int,
        prev_control=(0.0, 0.0),
        robot_radius: float = 0.0,
        **penalties,
    ) -> "BranchProblem":
        """Assemble a branch problem from a risk configuration.

        robot_radius inflates every obstacle and risk radius so the
        point-mass clearance constraints cover the real footprint. A disk
        already containing the start state would make its early rows
        unrepairable: no decision variable can move a step outside faster
        than the speed limit allows, and infeasible rows only ratchet their
        duals. Each disk therefore starts being enforced at the first step
        whose reachable set clears the current penetration depth, so every
        enforced row is satisfiable and the tail still pushes outward.
        """
        s0 = np.asarray(s0, dtype=float).reshape(3)
        reach = max(limits.v_max, 1e-9) * dt

        def first_enforced(centers_now: np.ndarray, radii: np.ndarray) -> np.ndarray:
            if radii.size == 0:
                return np.zeros(0, dtype=int)
            d = np.hypot(centers_now[:, 0] - s0[0], centers_now[:, 1] - s0[1])
            depth = np.maximum(radii - d, 0.0)
            return np.minimum(np.ceil(depth / reach).astype(int), n)

        obstacle_centers = np.asarray(obstacle_centers, dtype=float).reshape(n, -1, 2)
        obstacle_radii = np.asarray(obstacle_radii, dtype=float).ravel() + robot_radius
        risk_centers = np.array([[r.x, r.y] for r in config.regions]).reshape(-1, 2)
        risk_radii = np.array([r.radius for r in config.regions], dtype=float)
        if risk_radii.size:
            risk_radii = risk_radii + robot_radius
        return cls(
            s0=s0,
            n=n,
            dt=dt,
            weights=weights,
            limits=limits,
            prev_control=np.asarray(prev_control, dtype=float),
            obstacle_centers=obstacle_centers,
            obstacle_radii=obstacle_radii,
            obstacle_start=first_enforced(obstacle_centers[0], obstacle_radii),
            risk_centers=risk_centers,
            risk_radii=risk_radii,
            risk_start=first_enforced(risk_centers, risk_radii),
            consensus_steps=consensus_steps,
            **penalties,
        )


def pack_decision(traj: Trajectory) -> np.ndarray:
    return np.concatenate([traj.controls.ravel(), traj.states[1:].ravel()])


def unpack_decision(problem: BranchProblem, x: np.ndarray) -> Trajectory:
    n = problem.n
    controls = x[: 2 * n].reshape(n, 2)
    states = np.empty((n, 3))
    states[0] = problem.s0
    states[1:] = x[2 * n :].reshape(n - 1, 3)
    return Trajectory(states=states, controls=controls, dt=problem.dt)


def cost(traj: Trajectory, weights: CostWeights, prev_control=(0.0, 0.0)) -> float:
    """Running cost: control smoothness, reference-speed tracking, and a
    terminal pull toward the guide point.

    The smoothness term differences consecutive controls, seeded with the
    control applied in the previous cycle so replanning cannot fake a free
    first jump.
    """
    v = traj.controls[:, 0]
    om = traj.controls[:, 1]
    pv = np.concatenate([[float(prev_control[0])], v[:-1]])
    pom = np.concatenate([[float(prev_control[1])], om[:-1]])
    acc = np.sum(((v - pv) / traj.dt) ** 2 + ((om - pom) / traj.dt) ** 2)
    vel = np.sum((v - weights.v_ref) ** 2)
    dg = traj.states[-1, :2] - np.asarray(weights.guide_point, dtype=float)
    return float(
        weights.w_acc * acc + weights.w_vel * vel + weights.w_guide * (dg @ dg)
    )


def obstacle_penetration(
    traj: Trajectory, centers: np.ndarray, radii: np.ndarray
) -> np.ndarray:
    """Signed squared clearance per step and obstacle, positive inside.

    centers has shape (N, n_obs, 2) carrying the predicted position of each
    obstacle at every step; entry (k, j) is r_j^2 - |p_k - c_{k,j}|^2.
    """
    if radii.size == 0:
        return np.zeros((len(traj), 0))
    diff = traj.positions[:, None, :] - centers
    return radii[None, :] ** 2 - np.sum(diff * diff, axis=2)


def risk_penetration(
    traj: Trajectory, centers: np.ndarray, radii: np.ndarray
) -> np.ndarray:
    """Same clearance form against static risk disks, shape (N, n_risk)."""
    if radii.size == 0:
        return np.zeros((len(traj), 0))
    diff = traj.positions[:, None, :] - centers[None, :, :]
    return radii[None, :] ** 2 - np.sum(diff * diff, axis=2)


def dynamics_residual(traj: Trajectory) -> np.ndarray:
    """Kinematic defect s_{k+1} - f(s_k, u_k), heading row wrapped."""
    pred = step_array(traj.states[:-1], traj.controls[:-1], traj.dt)
    res = traj.states[1:] - pred
    res[:, 2] = wrap_angle(res[:, 2])
    return res


def consensus_residual(traj: Trajectory, consensus: ConsensusState) -> np.ndarray:
    """Deviation from the shared prefix, (N_c, 5), heading wrapped."""
    n_c = len(consensus)
    if n_c == 0:
        return np.zeros((0, CONSENSUS_DIMS))
    res = np.concatenate(
        [
            traj.states[:n_c] - consensus.states,
            traj.controls[:n_c] - consensus.controls,
        ],
        axis=1,
    )
    res[:, 2] = wrap_angle(res[:, 2])
    return res


def _relu(a: np.ndarray) -> np.ndarray:
    return np.where(a > 0.0, a, 0.0)


def augmented_lagrangian(
    problem: BranchProblem, traj: Trajectory, consensus: ConsensusState
) -> float:
    """Branch cost plus dual and penalty terms for every constraint family.

    Inequality penalties only act on violated entries; rows before a disk's
    first enforced step are skipped. The kinematic equality penalty is
    unconditional; the consensus terms couple the first consensus_steps
    states and controls to the shared prefix.
    """
    w = problem.weights
    val = cost(traj, w, problem.prev_control)
    g_obs = obstacle_penetration(traj, problem.obstacle_centers, problem.obstacle_radii)
    if g_obs.size:
        g_obs = g_obs * problem.obstacle_mask
        val += float(np.sum(problem.lam_obs * g_obs))
        val += problem.rho_obs * float(np.sum(_relu(g_obs) ** 2))
    g_risk = risk_penetration(traj, problem.risk_centers, problem.risk_radii)
    if g_risk.size:
        g_risk = g_risk * problem.risk_mask
        val += float(np.sum(problem.lam_risk * g_risk))
        val += problem.rho_risk * float(np.sum(_relu(g_risk) ** 2))
    h = dynamics_residual(traj)
    val += float(np.sum(problem.lam_kin * h)) + problem.rho_kin * float(np.sum(h * h))
    n_c = problem.consensus_steps
    if n_c:
        c = consensus_residual(traj, consensus)
        val += float(np.sum(problem.lam_cons * c)) + problem.rho_cons * float(
            np.sum(c * c)
        )
    return val


def box_penalty(traj: Trajectory, limits: ControlLimits, weight: float) -> float:
    """Quadratic penalty on controls outside their box, zero inside."""
    v, om = traj.controls[:, 0], traj.controls[:, 1]
    over = (
        _relu(v - limits.v_max) ** 2
        + _relu(limits.v_min - v) ** 2
        + _relu(om - limits.omega_max) ** 2
        + _relu(limits.omega_min - om) ** 2
    )
    return weight * float(np.sum(over))


def branch_objective(
    problem: BranchProblem, traj: Trajectory, consensus: ConsensusState
) -> float:
    """What the inner solver actually minimizes: the augmented Lagrangian
    plus a soft control box (weighted at ten times w_acc). Inside the box
    the two coincide."""
    return augmented_lagrangian(problem, traj, consensus) + box_penalty(
        traj, problem.limits, 10.0 * problem.weights.w_acc
    )


def _kinematic_jacobian_products(problem, traj, w_kin):
    """Accumulate J_kin^T w into (grad_u, grad_s) for the residual rows.

    w_kin has shape (N-1, 3). Returns the control part (N, 2) and the free
    state part (N-1, 3).
    """
    n, dt = problem.n, problem.dt
    theta = traj.states[:-1, 2]
    v = traj.controls[:-1, 0]
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    grad_u = np.zeros((n, 2))
    grad_s = np.zeros((n - 1, 3))
    # d r_k / d s_{k+1} = I: rows k map onto free state k+1 -> index k
    grad_s += w_kin
    # d r_k / d u_k = -B_k
    grad_u[:-1, 0] -= dt * (cos_t * w_kin[:, 0] + sin_t * w_kin[:, 1])
    grad_u[:-1, 1] -= dt * w_kin[:, 2]
    # d r_k / d s_k = -A_k, only k >= 1 is free (free index k-1)
    a_t_w = np.empty((n - 1, 3))
    a_t_w[:, 0] = w_kin[:, 0]
    a_t_w[:, 1] = w_kin[:, 1]
    a_t_w[:, 2] = (
        -v * dt * sin_t * w_kin[:, 0] + v * dt * cos_t * w_kin[:, 1] + w_kin[:, 2]
    )
    grad_s[: n - 2] -= a_t_w[1:]
    return grad_u, grad_s


def augmented_lagrangian_grad(
    problem: BranchProblem, traj: Trajectory, consensus: ConsensusState
) -> np.ndarray:
    """Analytic gradient of augmented_lagrangian in the packed decision
    vector. Wrapped-angle kinks and inactive inequality entries contribute
    their one-sided derivatives."""
    n, dt = problem.n, problem.dt
    w = problem.weights
    grad_u = np.zeros((n, 2))
    grad_s = np.zeros((n - 1, 3))

    # smoothness: forward and backward differences per control channel
    ctrl = traj.controls
    prev = np.concatenate([problem.prev_control[None, :], ctrl[:-1]], axis=0)
    d = (ctrl - prev) / dt**2
    grad_u += 2.0 * w.w_acc * d
    grad_u[:-1] -= 2.0 * w.w_acc * d[1:]
    # reference speed tracking
    grad_u[:, 0] += 2.0 * w.w_vel * (ctrl[:, 0] - w.v_ref)
    # terminal guide pull
    dg = traj.states[-1, :2] - np.asarray(w.guide_point, dtype=float)
    grad_s[-1, :2] += 2.0 * w.w_guide * dg

    # clearance families: d g / d p_k = -2 (p_k - c)
    for centers, radii, lam, rho, mask, pen in (
        (
            problem.obstacle_centers,
            problem.obstacle_radii,
            problem.lam_obs,
            problem.rho_obs,
            problem.obstacle_mask,
            obstacle_penetration,
        ),
        (
            problem.risk_centers,
            problem.risk_radii,
            problem.lam_risk,
            problem.rho_risk,
            problem.risk_mask,
            risk_penetration,
        ),
    ):
        if radii.size == 0:
            continue
        g = pen(traj, centers, radii) * mask
        coef = (lam + 2.0 * rho * _relu(g)) * mask  # (n, n_obs)
        diff = (
            traj.positions[:, None, :] - centers
            if centers.ndim == 3
            else traj.positions[:, None, :] - centers[None, :, :]
        )
        contrib = -2.0 * np.sum(coef[:, :, None] * diff, axis=1)  # (n, 2)
        grad_s[:, :2] += contrib[1:]

    # kinematic defect
    h = dynamics_residual(traj)
    w_kin = problem.lam_kin + 2.0 * problem.rho_kin * h
    gu, gs = _kinematic_jacobian_products(problem, traj, w_kin)
    grad_u += gu
    grad_s += gs

    # consensus coupling on the prefix
    n_c = problem.consensus_steps
    if n_c:
        c = consensus_residual(traj, consensus)
        coef = problem.lam_cons + 2.0 * problem.rho_cons * c
        grad_s[: n_c - 1] += coef[1:, :3]
        grad_u[:n_c] += coef[:, 3:]

    return np.concatenate([grad_u.ravel(), grad_s.ravel()])


def box_penalty_grad(traj: Trajectory, limits: ControlLimits, weight: float):
    """Gradient of box_penalty on the control block, (N, 2)."""
    v, om = traj.controls[:, 0], traj.controls[:, 1]
    gv = 2.0 * weight * (_relu(v - limits.v_max) - _relu(limits.v_min - v))
    gom = 2.0 * weight * (
        _relu(om - limits.omega_max) - _relu(limits.omega_min - om)
    )
    return np.stack([gv, gom], axis=1)


def branch_objective_grad(
    problem: BranchProblem, traj: Trajectory, consensus: ConsensusState
) -> np.ndarray:
    grad = augmented_lagrangian_grad(problem, traj, consensus)
    gb = box_penalty_grad(traj, problem.limits, 10.0 * problem.weights.w_acc)
    grad[: 2 * problem.n] += gb.ravel()
    return grad
