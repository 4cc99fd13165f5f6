"""Receding-horizon planner tying geometry, branches and the solver together.

Each cycle rebuilds the occlusion geometry and risk regions from the current
pose, assembles one problem per hypothesis, warm-starts everything from the
previous solution and runs the alternating solver. The planner is stateful
on purpose: shifted trajectories and persistent duals keep the per-cycle
budget small.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .branch_problem import BranchProblem, ControlLimits, CostWeights
from .consensus_solver import (
    PlannerFailureError,
    SolveReport,
    SolverConfig,
    plan_cycle,
)
from .kinematics import RobotState, Trajectory, rollout
from .occlusion import Disk, OcclusionParams, RiskRegionConfig, build_configurations


@dataclass(frozen=True)
class ObstacleObservation:
    """One sensed obstacle: bounding disk plus estimated velocity."""

    obstacle_id: str
    position: tuple[float, float]
    radius: float
    velocity: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class PlannerConfig:
    horizon_steps: int = 24
    dt: float = 0.25
    consensus_sec: float = 2.0
    # assumed top speeds of hidden agents, one branch each; None means the
    # branch neglects risk regions entirely
    branch_speeds: tuple[float | None, ...] = (None, 0.5, 1.0)
    weights: CostWeights = field(default_factory=CostWeights)
    limits: ControlLimits = field(default_factory=ControlLimits)
    occlusion: OcclusionParams = field(default_factory=OcclusionParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    robot_half_length: float = 0.4
    robot_half_width: float = 0.2
    safety_margin: float = 0.05

    def __post_init__(self):
        if self.horizon_steps < 2:
            raise ValueError("horizon needs at least two steps")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not self.branch_speeds:
            raise ValueError("need at least one branch")
        if self.consensus_steps > self.horizon_steps:
            raise ValueError("consensus segment cannot exceed the horizon")

    @property
    def consensus_steps(self) -> int:
        return int(round(self.consensus_sec / self.dt))

    @property
    def horizon_sec(self) -> float:
        return self.horizon_steps * self.dt

    @property
    def robot_radius(self) -> float:
        """Bounding circle of the rectangular footprint."""
        return math.hypot(self.robot_half_length, self.robot_half_width)

    @property
    def inflation(self) -> float:
        return self.robot_radius + self.safety_margin


@dataclass
class PlanResult:
    control: np.ndarray  # clamped, what actually gets applied
    report: SolveReport
    configs: list[RiskRegionConfig]
    guide_point: tuple[float, float]

    @property
    def risk_region_count(self) -> int:
        return sum(len(c.regions) for c in self.configs)


class CmpcPlanner:
    """Stateful receding-horizon planner over risk-hypothesis branches."""

    def __init__(self, config: PlannerConfig = PlannerConfig()):
        self.config = config
        occ = config.occlusion
        if occ.max_travel_time is None:
            # hidden agents only matter for what they can reach within the
            # horizon; also keeps risk radii finite as the robot slows
            occ = dataclasses.replace(occ, max_travel_time=config.horizon_sec)
        self._occlusion = occ
        self.reset()

    def reset(self) -> None:
        self._trajectories: list[Trajectory] | None = None
        self._duals: list[dict[str, np.ndarray]] | None = None
        self._obstacle_ids: tuple = ()
        self._risk_keys: list[tuple] = []
        self._last_control = np.zeros(2)
        self._has_plan = False

    def _build_problems(
        self,
        state: RobotState,
        observations: list[ObstacleObservation],
        guide_point,
    ) -> tuple[list[BranchProblem], list[RiskRegionConfig], list[tuple]]:
        cfg = self.config
        s0 = np.array([state.x, state.y, state.theta], dtype=float)
        obs = sorted(observations, key=lambda o: str(o.obstacle_id))
        obstacle_ids = tuple(o.obstacle_id for o in obs)

        disks = [Disk(o.obstacle_id, o.position[0], o.position[1], o.radius) for o in obs]
        risk_speed = float(self._last_control[0]) if self._has_plan else cfg.weights.v_ref
        configs = build_configurations(
            state, risk_speed, disks, list(cfg.branch_speeds), self._occlusion
        )
        risk_keys = [
            tuple((r.source_id, r.tangent_index, r.slot_index) for r in c.regions)
            for c in configs
        ]

        n, dt = cfg.horizon_steps, cfg.dt
        steps = np.arange(n)[:, None] * dt
        if obs:
            pos = np.array([o.position for o in obs], dtype=float)
            vel = np.array([o.velocity for o in obs], dtype=float)
            tracks = pos[None, :, :] + steps[:, :, None] * vel[None, :, :]
            radii = np.array([o.radius for o in obs], dtype=float)
        else:
            tracks = np.zeros((n, 0, 2))
            radii = np.zeros(0)

        weights = dataclasses.replace(
            cfg.weights, guide_point=(float(guide_point[0]), float(guide_point[1]))
        )
        reuse = (
            self._duals is not None
            and obstacle_ids == self._obstacle_ids
            and risk_keys == self._risk_keys
        )
        problems = []
        for z, config in enumerate(configs):
            penalties = {}
            if reuse:
                penalties = {
                    "lam_obs": self._duals[z]["lam_obs"].copy(),
                    "lam_risk": self._duals[z]["lam_risk"].copy(),
                    "lam_kin": self._duals[z]["lam_kin"].copy(),
                }
            problems.append(
                BranchProblem.build(
                    s0=s0,
                    config=config,
                    obstacle_centers=tracks,
                    obstacle_radii=radii,
                    weights=weights,
                    limits=cfg.limits,
                    n=n,
                    dt=dt,
                    consensus_steps=cfg.consensus_steps,
                    prev_control=self._last_control.copy(),
                    robot_radius=cfg.inflation,
                    **penalties,
                )
            )
        return problems, configs, risk_keys

    def plan(
        self,
        state: RobotState,
        observations: list[ObstacleObservation],
        guide_point,
    ) -> PlanResult:
        cfg = self.config
        s0 = np.array([state.x, state.y, state.theta], dtype=float)
        problems, configs, risk_keys = self._build_problems(
            state, observations, guide_point
        )
        obstacle_ids = tuple(
            o.obstacle_id
            for o in sorted(observations, key=lambda o: str(o.obstacle_id))
        )

        inits = self._warm_starts(s0, problems)
        try:
            report = plan_cycle(problems, inits, cfg.solver)
        except PlannerFailureError:
            self.reset()
            raise
        control = cfg.limits.clamp(report.applied_control)

        self._trajectories = [t.copy() for t in report.trajectories]
        self._duals = [
            {
                "lam_obs": p.lam_obs.copy(),
                "lam_risk": p.lam_risk.copy(),
                "lam_kin": p.lam_kin.copy(),
            }
            for p in problems
        ]
        self._obstacle_ids = obstacle_ids
        self._risk_keys = risk_keys
        self._last_control = control.copy()
        self._has_plan = True
        return PlanResult(
            control=control,
            report=report,
            configs=configs,
            guide_point=(float(guide_point[0]), float(guide_point[1])),
        )

    def _warm_starts(self, s0, problems) -> list[Trajectory]:
        cfg = self.config
        if self._trajectories is None or len(self._trajectories) != len(problems):
            # cold start holds the last applied control, which is zero at the
            # start of an episode. A reference-speed rollout would begin deep
            # inside whatever risk regions currently block the corridor and
            # hand the dual ascent a large initial violation to amplify.
            ctrl = np.tile(cfg.limits.clamp(self._last_control), (cfg.horizon_steps, 1))
            start = RobotState(s0[0], s0[1], s0[2])
            return [rollout(start, ctrl, cfg.dt) for _ in problems]
        inits = []
        for prev in self._trajectories:
            states = np.empty_like(prev.states)
            controls = np.empty_like(prev.controls)
            states[:-1] = prev.states[1:]
            states[-1] = prev.states[-1]
            controls[:-1] = prev.controls[1:]
            controls[-1] = prev.controls[-1]
            states[0] = s0  # re-anchor on the measured state
            inits.append(Trajectory(states, controls, cfg.dt))
        return inits
