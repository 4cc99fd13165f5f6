"""Closed-loop 2D world: scenario files, triggered obstacles, guidance.

The world advances at the control rate. Obstacle motion, trigger checks and
collision tests run on a finer substep grid so a fast crosser cannot tunnel
past the robot between control updates; the robot position is interpolated
linearly across the control interval for those checks while its state
advances through the same Euler step the planner models. All randomness is
drawn once per episode from the seed: dynamic obstacle speeds and trigger
delays. Identical (scenario, seed, config) reruns produce identical logs.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .consensus_solver import PlannerFailureError
from .kinematics import RobotState, step
from .occlusion import Disk, is_visible
from .planner import CmpcPlanner, ObstacleObservation, PlannerConfig

SCHEMA_VERSION = 1
# substep target for obstacle integration and collision sweeps, seconds
SUBSTEP = 0.02
GOAL_TOLERANCE = 0.5


@dataclass(frozen=True)
class TriggerRule:
    """Dormant-until-approached behavior of a dynamic obstacle."""

    activation_distance: float
    velocity: tuple[float, float]
    # per-seed speed resampling range; None keeps the configured magnitude
    speed_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.activation_distance <= 0:
            raise ValueError("activation_distance must be positive")
        if self.speed_range is not None:
            lo, hi = self.speed_range
            if not 0 < lo <= hi:
                raise ValueError("speed_range must be 0 < lo <= hi")


@dataclass(frozen=True)
class ObstacleSpec:
    obstacle_id: str
    position: tuple[float, float]
    radius: float
    trigger: TriggerRule | None = None

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"obstacle {self.obstacle_id}: radius must be positive")

    @property
    def dynamic(self) -> bool:
        return self.trigger is not None


def _bounding_radius(entry: dict) -> float:
    if "radius" in entry:
        return float(entry["radius"])
    if "half_extents" in entry:
        hx, hy = entry["half_extents"]
        return math.hypot(float(hx), float(hy))
    raise ValueError(f"obstacle {entry.get('id', '?')}: needs radius or half_extents")


@dataclass(frozen=True)
class Scenario:
    """Static description of one episode, loadable from JSON (schema 1)."""

    name: str
    robot_start: RobotState
    robot_half_length: float
    robot_half_width: float
    obstacles: tuple[ObstacleSpec, ...]
    guide_path: tuple[tuple[float, float], ...]
    v_ref: float
    sensor_range: float
    dt: float
    max_time: float

    def __post_init__(self):
        if len(self.guide_path) < 2:
            raise ValueError("guide_path needs at least two waypoints")
        if self.dt <= 0 or self.max_time <= 0:
            raise ValueError("dt and max_time must be positive")
        if self.v_ref <= 0:
            raise ValueError("v_ref must be positive")
        seen = set()
        for spec in self.obstacles:
            if spec.obstacle_id in seen:
                raise ValueError(f"duplicate obstacle id {spec.obstacle_id}")
            seen.add(spec.obstacle_id)

    @property
    def robot_radius(self) -> float:
        return math.hypot(self.robot_half_length, self.robot_half_width)

    @property
    def goal(self) -> tuple[float, float]:
        return self.guide_path[-1]

    @classmethod
    def from_dict(cls, data: dict, name: str = "scenario") -> "Scenario":
        if data.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported scenario schema {data.get('schema')!r}")
        start = data["robot_start"]
        footprint = data.get("robot_footprint", {})
        obstacles = []
        for entry in data.get("obstacles", []):
            trigger = None
            if "trigger" in entry:
                t = entry["trigger"]
                rng = t.get("speed_range")
                trigger = TriggerRule(
                    activation_distance=float(t["activation_distance"]),
                    velocity=(float(t["velocity"][0]), float(t["velocity"][1])),
                    speed_range=None if rng is None else (float(rng[0]), float(rng[1])),
                )
            obstacles.append(
                ObstacleSpec(
                    obstacle_id=str(entry["id"]),
                    position=(float(entry["position"][0]), float(entry["position"][1])),
                    radius=_bounding_radius(entry),
                    trigger=trigger,
                )
            )
        return cls(
            name=data.get("name", name),
            robot_start=RobotState(
                float(start["x"]), float(start["y"]), float(start.get("theta", 0.0))
            ),
            robot_half_length=float(footprint.get("half_length", 0.4)),
            robot_half_width=float(footprint.get("half_width", 0.2)),
            obstacles=tuple(obstacles),
            guide_path=tuple((float(p[0]), float(p[1])) for p in data["guide_path"]),
            v_ref=float(data["v_ref"]),
            sensor_range=float(data.get("sensor_range", 10.0)),
            dt=float(data.get("dt", 0.25)),
            max_time=float(data.get("max_time", 60.0)),
        )

    @classmethod
    def from_json(cls, path) -> "Scenario":
        path = Path(path)
        with open(path) as fh:
            data = json.load(fh)
        return cls.from_dict(data, name=path.stem)


def project_on_path(path, pos) -> tuple[float, float]:
    """Arc length and distance of the nearest point on a polyline.

    Ties between segments resolve to the earliest arc length, which keeps
    the projection deterministic on paths that loop near themselves.
    """
    pts = np.asarray(path, dtype=float)
    pos = np.asarray(pos, dtype=float)
    seg = pts[1:] - pts[:-1]
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    best_d, best_s = np.inf, 0.0
    for i in range(len(seg)):
        # below 1e-12 m the squared length can underflow to zero
        if seg_len[i] < 1e-12:
            continue
        t = float(np.clip(np.dot(pos - pts[i], seg[i]) / seg_len[i] ** 2, 0.0, 1.0))
        q = pts[i] + t * seg[i]
        d = float(np.hypot(*(pos - q)))
        if d < best_d - 1e-12:
            best_d, best_s = d, float(cum[i] + t * seg_len[i])
    return best_s, best_d


def point_at_arc_length(path, s: float, extend: bool = False) -> np.ndarray:
    """Point on the polyline at arc length s.

    Clamped to the ends by default. With extend=True an overshooting s
    continues along the final segment direction instead of pinning at the
    last waypoint; lookahead queries use this so the target keeps receding
    at the same rate near the path end rather than freezing in place.
    """
    pts = np.asarray(path, dtype=float)
    seg = pts[1:] - pts[:-1]
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = float(cum[-1])
    if extend and s > total:
        live = [j for j in range(len(seg)) if seg_len[j] > 0.0]
        if live:
            j = live[-1]
            return pts[-1] + (s - total) * seg[j] / seg_len[j]
        s = total
    s = float(np.clip(s, 0.0, total))
    i = int(np.searchsorted(cum[1:], s, side="left"))
    i = min(i, len(seg) - 1)
    t = (s - cum[i]) / seg_len[i] if seg_len[i] > 0.0 else 0.0
    return pts[i] + t * seg[i]


def path_tangent(path, pos) -> float:
    """Heading of the guide path at the projection of pos onto it."""
    pts = np.asarray(path, dtype=float)
    s, _ = project_on_path(pts, pos)
    seg = pts[1:] - pts[:-1]
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    # midpoint of the owning segment avoids the vertex ambiguity
    i = int(np.searchsorted(cum[1:], min(s, cum[-1] - 1e-9), side="right"))
    i = min(max(i, 0), len(seg) - 1)
    if seg_len[i] == 0.0:
        i = max(j for j in range(len(seg)) if seg_len[j] > 0.0)
    return float(math.atan2(seg[i, 1], seg[i, 0]))


@dataclass
class _ObstacleState:
    spec: ObstacleSpec
    position: np.ndarray
    velocity: np.ndarray  # zeros until activation
    armed_velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    trigger_delay: float = 0.0
    active: bool = False
    start_time: float | None = None  # armed trigger, motion begins here
    visible: bool = False


class World:
    """Mutable episode state: robot, obstacles, clocks and collision flag."""

    def __init__(self, scenario: Scenario, seed: int = 0):
        self.scenario = scenario
        self.seed = int(seed)
        self.robot = scenario.robot_start
        self.time = 0.0
        self.collided = False
        self.collided_with: str | None = None
        rng = np.random.default_rng(self.seed)
        self.obstacles: list[_ObstacleState] = []
        for spec in scenario.obstacles:
            vel = np.zeros(2)
            delay = 0.0
            if spec.trigger is not None:
                nominal = np.asarray(spec.trigger.velocity, dtype=float)
                if spec.trigger.speed_range is not None:
                    lo, hi = spec.trigger.speed_range
                    speed = rng.uniform(lo, hi)
                    norm = float(np.hypot(*nominal))
                    direction = nominal / norm if norm > 0 else np.array([0.0, -1.0])
                    nominal = direction * speed
                # trigger timing jitter: the configured 2 m rule fires with a
                # small reaction delay, uniform over [0, 0.2] s (0.1 +- 0.1)
                delay = float(rng.uniform(0.0, 0.2))
                vel = nominal
            self.obstacles.append(
                _ObstacleState(
                    spec=spec,
                    position=np.asarray(spec.position, dtype=float),
                    velocity=np.zeros(2),
                    armed_velocity=vel,
                    trigger_delay=delay,
                )
            )
        self._refresh_visibility()

    def _disks(self) -> list[Disk]:
        return [
            Disk(o.spec.obstacle_id, float(o.position[0]), float(o.position[1]), o.spec.radius)
            for o in self.obstacles
        ]

    def _refresh_visibility(self) -> None:
        disks = self._disks()
        for o, d in zip(self.obstacles, disks):
            o.visible = is_visible(self.robot, d, disks, self.scenario.sensor_range)

    def observations(self) -> list[ObstacleObservation]:
        """Visible obstacles with their bounding disks and sensed velocity.

        A dormant obstacle reads as static: the sensor has no way to know
        it will move.
        """
        out = []
        for o in self.obstacles:
            if not o.visible:
                continue
            out.append(
                ObstacleObservation(
                    obstacle_id=o.spec.obstacle_id,
                    position=(float(o.position[0]), float(o.position[1])),
                    radius=o.spec.radius,
                    velocity=(float(o.velocity[0]), float(o.velocity[1])),
                )
            )
        return out

    def guidance(self, lookahead: float) -> tuple[float, float]:
        """Guide point at (projection + lookahead) along the path.

        The lookahead extends past the final waypoint along the last
        segment, so tracking stays well posed while the episode closes in
        on the goal; the run still ends at the goal tolerance.
        """
        s, _ = project_on_path(self.scenario.guide_path, (self.robot.x, self.robot.y))
        p = point_at_arc_length(self.scenario.guide_path, s + lookahead, extend=True)
        return float(p[0]), float(p[1])

    def check_collision(self) -> bool:
        """Instantaneous strict-overlap test of bounding circles."""
        rr = self.scenario.robot_radius
        p = np.array([self.robot.x, self.robot.y])
        for o in self.obstacles:
            if float(np.hypot(*(o.position - p))) < rr + o.spec.radius:
                return True
        return False

    def distance_to_goal(self) -> float:
        gx, gy = self.scenario.goal
        return math.hypot(self.robot.x - gx, self.robot.y - gy)

    def tick(self, control) -> None:
        """Advance one control interval.

        The robot state moves through the same single Euler step the planner
        predicts with. Triggers, obstacle motion and collision run on the
        substep grid against the linearly interpolated robot position;
        trigger delays are quantized up to the next substep boundary.
        """
        sc = self.scenario
        dt = sc.dt
        control = np.asarray(control, dtype=float)
        old = np.array([self.robot.x, self.robot.y])
        new_state = step(self.robot, control, dt)
        new = np.array([new_state.x, new_state.y])
        n_sub = max(1, int(math.ceil(dt / SUBSTEP)))
        h = dt / n_sub
        rr = sc.robot_radius
        for i in range(1, n_sub + 1):
            t_sub = self.time + i * h
            frac = i / n_sub
            robot_pos = old + frac * (new - old)
            for o in self.obstacles:
                spec = o.spec
                if spec.trigger is not None and o.start_time is None:
                    gap = float(np.hypot(*(o.position - robot_pos)))
                    if gap <= spec.trigger.activation_distance:
                        o.start_time = t_sub + o.trigger_delay
                if o.start_time is not None and not o.active and t_sub >= o.start_time:
                    o.active = True
                    o.velocity = o.armed_velocity.copy()
                if o.active:
                    o.position = o.position + h * o.velocity
                if not self.collided:
                    gap = float(np.hypot(*(o.position - robot_pos)))
                    if gap < rr + spec.radius:
                        self.collided = True
                        self.collided_with = spec.obstacle_id
        self.robot = new_state
        self.time += dt
        self._refresh_visibility()


@dataclass
class SimLog:
    """Per-cycle episode records plus the episode verdict."""

    scenario_name: str
    seed: int
    dt: float
    records: list[dict] = field(default_factory=list)
    collided: bool = False
    collided_with: str | None = None
    reached_goal: bool = False
    planner_failures: int = 0
    duration: float = 0.0

    CSV_HEADER = "time,x,y,theta,v,omega,v_lat,branch_count,solve_ms,collision_flag"

    def to_ndjson(self, mask_timing: bool = False) -> str:
        lines = []
        head = {
            "scenario": self.scenario_name,
            "seed": self.seed,
            "dt": self.dt,
            "collided": self.collided,
            "collided_with": self.collided_with,
            "reached_goal": self.reached_goal,
            "planner_failures": self.planner_failures,
            "duration": self.duration,
        }
        lines.append(json.dumps(head, sort_keys=True, separators=(",", ":")))
        for rec in self.records:
            if mask_timing:
                rec = dict(rec)
                rec["solve_ms"] = 0.0
            lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
        return "\n".join(lines) + "\n"

    def canonical_bytes(self) -> bytes:
        """Byte stream for replay comparison: wall-time fields masked."""
        return self.to_ndjson(mask_timing=True).encode()

    def to_csv(self) -> str:
        rows = [self.CSV_HEADER]
        for rec in self.records:
            s = rec["state"]
            u = rec["control"]
            rows.append(
                f"{rec['time']:.3f},{s[0]:.6f},{s[1]:.6f},{s[2]:.6f},"
                f"{u[0]:.6f},{u[1]:.6f},{rec['v_lat']:.6f},"
                f"{rec['branch_count']},{rec['solve_ms']:.3f},"
                f"{int(rec['collision_flag'])}"
            )
        return "\n".join(rows) + "\n"

    def write(self, out_dir, stem: str | None = None) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = stem or f"{self.scenario_name}_seed{self.seed}"
        nd = out_dir / f"{stem}.ndjson"
        cs = out_dir / f"{stem}.csv"
        nd.write_text(self.to_ndjson())
        cs.write_text(self.to_csv())
        return nd, cs

    @property
    def states(self) -> np.ndarray:
        return np.array([r["state"] for r in self.records]).reshape(-1, 3)

    @property
    def controls(self) -> np.ndarray:
        return np.array([r["control"] for r in self.records]).reshape(-1, 2)

    @property
    def lateral_velocities(self) -> np.ndarray:
        return np.array([r["v_lat"] for r in self.records])

    @property
    def solve_times_ms(self) -> np.ndarray:
        return np.array([r["solve_ms"] for r in self.records])

    @property
    def converged_flags(self) -> np.ndarray:
        return np.array([r["converged"] for r in self.records], dtype=bool)


def run_episode(
    scenario: Scenario, config: PlannerConfig, seed: int = 0
) -> SimLog:
    """Closed-loop episode: sense, plan, apply the first consensus control,
    tick, until the goal is reached, a collision occurs or time runs out.

    The scenario's v_ref, sensor range and control period override the
    planner config so one config can serve many scenarios. A planner failure
    commands a hard stop for that cycle and is recorded, not fatal.
    """
    config = dataclasses.replace(
        config,
        dt=scenario.dt,
        weights=dataclasses.replace(config.weights, v_ref=scenario.v_ref),
        occlusion=dataclasses.replace(
            config.occlusion, sensor_range=scenario.sensor_range
        ),
        robot_half_length=scenario.robot_half_length,
        robot_half_width=scenario.robot_half_width,
    )
    world = World(scenario, seed)
    planner = CmpcPlanner(config)
    lookahead = scenario.v_ref * config.horizon_sec
    log = SimLog(scenario_name=scenario.name, seed=seed, dt=scenario.dt)
    path = scenario.guide_path
    max_cycles = int(math.ceil(scenario.max_time / scenario.dt))

    for _ in range(max_cycles):
        obs = world.observations()
        guide = world.guidance(lookahead)
        failed = False
        try:
            result = planner.plan(world.robot, obs, guide)
            control = result.control
            report = result.report
            branch_count = len(report.trajectories)
            risk_count = result.risk_region_count
        except PlannerFailureError:
            failed = True
            control = np.zeros(2)
            report = None
            branch_count = 0
            risk_count = 0
            log.planner_failures += 1

        tangent = path_tangent(path, (world.robot.x, world.robot.y))
        v_lat = float(control[0] * math.sin(world.robot.theta - tangent))
        rec = {
            "time": round(world.time, 6),
            "state": [world.robot.x, world.robot.y, world.robot.theta],
            "control": [float(control[0]), float(control[1])],
            "v_lat": v_lat,
            "branch_count": branch_count,
            "risk_regions": risk_count,
            "obstacles": [
                {
                    "id": o.spec.obstacle_id,
                    "x": float(o.position[0]),
                    "y": float(o.position[1]),
                    "visible": o.visible,
                    "active": o.active,
                }
                for o in world.obstacles
            ],
            "branches": (
                []
                if report is None
                else [t.states.round(9).tolist() for t in report.trajectories]
            ),
            "iterations": 0 if report is None else report.iterations,
            "converged": False if report is None else report.converged,
            "solve_ms": 0.0 if report is None else round(report.wall_ms, 3),
            "planner_failure": failed,
        }

        world.tick(control)
        rec["collision_flag"] = world.collided
        log.records.append(rec)

        if world.collided:
            break
        if world.distance_to_goal() <= GOAL_TOLERANCE:
            log.reached_goal = True
            break

    log.collided = world.collided
    log.collided_with = world.collided_with
    log.duration = world.time
    return log
