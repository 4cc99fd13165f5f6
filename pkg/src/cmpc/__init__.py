"""Occlusion-aware consensus MPC: multi-hypothesis branch planning with a
shared consensus prefix, plus a small closed-loop 2D simulator."""

from .branch_problem import (
    BranchProblem,
    ConsensusState,
    ControlLimits,
    CostWeights,
)
from .consensus_solver import (
    NewtonConfig,
    PlannerFailureError,
    SolveReport,
    SolverConfig,
    plan_cycle,
)
from .kinematics import ControlInput, RobotState, Trajectory, rollout, step, wrap_angle
from .metrics import (
    AggregateReport,
    MetricsReport,
    baseline_config,
    consistency_metrics,
    episode_metrics,
    lateral_velocity,
    run_baseline,
    sweep_consensus,
)
from .occlusion import (
    DegenerateGeometryError,
    Disk,
    OccludedRegion,
    OcclusionParams,
    RiskRegion,
    RiskRegionConfig,
    build_configurations,
    is_visible,
    occluded_region,
    risk_regions,
    tangent_slopes,
)
from .planner import CmpcPlanner, ObstacleObservation, PlannerConfig, PlanResult
from .world import Scenario, SimLog, World, run_episode

__all__ = [
    "ControlInput",
    "RobotState",
    "Trajectory",
    "rollout",
    "step",
    "wrap_angle",
    "DegenerateGeometryError",
    "Disk",
    "OccludedRegion",
    "OcclusionParams",
    "RiskRegion",
    "RiskRegionConfig",
    "build_configurations",
    "is_visible",
    "occluded_region",
    "risk_regions",
    "tangent_slopes",
    "BranchProblem",
    "ConsensusState",
    "ControlLimits",
    "CostWeights",
    "NewtonConfig",
    "PlannerFailureError",
    "SolveReport",
    "SolverConfig",
    "plan_cycle",
    "CmpcPlanner",
    "ObstacleObservation",
    "PlannerConfig",
    "PlanResult",
    "Scenario",
    "SimLog",
    "World",
    "run_episode",
    "AggregateReport",
    "MetricsReport",
    "baseline_config",
    "consistency_metrics",
    "episode_metrics",
    "lateral_velocity",
    "run_baseline",
    "sweep_consensus",
]
