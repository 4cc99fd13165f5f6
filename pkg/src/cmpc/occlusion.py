"""Occlusion geometry.

Everything here works on bounding disks in the world frame. A disk that
blocks the line of sight casts a shadow cone; the cone is described in the
robot body frame by the slopes of the two tangent lines through the robot.
Risk regions are disks placed along those tangent lines at increasing range,
sized by how far a hidden agent could travel in the time the robot needs to
get there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kinematics import RobotState


class DegenerateGeometryError(ValueError):
    """Tangent geometry too ill conditioned to use this planning cycle."""


@dataclass(frozen=True)
class Disk:
    """Bounding disk of one obstacle."""

    obstacle_id: str
    x: float
    y: float
    radius: float

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class OcclusionParams:
    sensor_range: float = 10.0
    max_occluded_regions: int = 2
    slots_per_tangent: int = 2
    # spacing between consecutive risk slots; None means reuse the source
    # disk radius so slots tile the shadow without gaps
    slot_spacing: float | None = None
    sigma: float = 1e-4
    eps_geo: float = 1e-6
    # cap on the travel time entering the risk radius; a hidden agent only
    # matters for the horizon it can reach, and an uncapped quotient blows
    # up as the robot slows. None keeps the raw quotient.
    max_travel_time: float | None = None


def to_body(robot: RobotState, points) -> np.ndarray:
    """Map world points (..., 2) into the robot body frame."""
    pts = np.asarray(points, dtype=float)
    d = pts - np.array([robot.x, robot.y])
    c, s = math.cos(robot.theta), math.sin(robot.theta)
    out = np.empty_like(d)
    out[..., 0] = c * d[..., 0] + s * d[..., 1]
    out[..., 1] = -s * d[..., 0] + c * d[..., 1]
    return out


def to_world(robot: RobotState, points) -> np.ndarray:
    """Inverse of to_body."""
    pts = np.asarray(points, dtype=float)
    c, s = math.cos(robot.theta), math.sin(robot.theta)
    out = np.empty_like(pts)
    out[..., 0] = c * pts[..., 0] - s * pts[..., 1] + robot.x
    out[..., 1] = s * pts[..., 0] + c * pts[..., 1] + robot.y
    return out


def tangent_slopes(
    x_rel: float, y_rel: float, radius: float, eps_geo: float = 1e-6
) -> tuple[float, float]:
    """Slopes of the two lines through the origin tangent to a disk.

    The disk sits at (x_rel, y_rel) in the body frame. Returns (m1, m2)
    with m1 >= m2. The viewer must be strictly outside the disk, and the
    slopes blow up when |x_rel| approaches the radius, so that band is
    rejected as degenerate.
    """
    d2 = x_rel * x_rel + y_rel * y_rel
    r2 = radius * radius
    if not (d2 > r2):
        raise ValueError("viewer must be strictly outside the disk")
    den = x_rel * x_rel - r2
    if abs(den) < eps_geo:
        raise DegenerateGeometryError("near-vertical tangent line")
    root = radius * math.sqrt(d2 - r2)
    m_a = (x_rel * y_rel + root) / den
    m_b = (x_rel * y_rel - root) / den
    return (m_a, m_b) if m_a >= m_b else (m_b, m_a)


@dataclass(frozen=True)
class OccludedRegion:
    """Shadow cone behind one disk, anchored to the pose that created it.

    m1/m2 are the upper/lower tangent slopes in the body frame of
    robot_pose; (x_rel, y_rel) is the source disk center in that frame.
    """

    source_id: str
    m1: float
    m2: float
    x_rel: float
    y_rel: float
    r_obs: float
    robot_pose: tuple[float, float, float]

    @property
    def boundary_matrix(self) -> np.ndarray:
        """Rows are half-plane normals; a body-frame point p is inside the
        shadow cone iff every component of A @ p is strictly negative."""
        return np.array(
            [[-self.m1, 1.0], [self.m2, -1.0], [-1.0, 0.0]], dtype=float
        )

    def contains(self, points_world) -> np.ndarray:
        robot = RobotState(*self.robot_pose)
        body = to_body(robot, points_world)
        vals = body @ self.boundary_matrix.T
        return np.all(vals < 0.0, axis=-1)


def occluded_region(
    robot: RobotState, disk: Disk, params: OcclusionParams = OcclusionParams()
) -> OccludedRegion:
    """Build the shadow cone cast by one disk as seen from the robot.

    The cone description only makes sense when it opens forward, which
    needs the disk center ahead of the robot by more than its radius;
    anything else is reported as degenerate and skipped for a cycle.
    """
    rel = to_body(robot, disk.center)
    x_rel, y_rel = float(rel[0]), float(rel[1])
    m1, m2 = tangent_slopes(x_rel, y_rel, disk.radius, params.eps_geo)
    if x_rel <= disk.radius:
        raise DegenerateGeometryError("shadow cone does not open forward")
    return OccludedRegion(
        source_id=disk.obstacle_id,
        m1=m1,
        m2=m2,
        x_rel=x_rel,
        y_rel=y_rel,
        r_obs=disk.radius,
        robot_pose=(robot.x, robot.y, robot.theta),
    )


@dataclass(frozen=True)
class RiskRegion:
    """Disk a hidden agent could occupy when the robot reaches its range."""

    x: float
    y: float
    radius: float
    tangent_index: int  # 1 = upper tangent, 2 = lower
    slot_index: int
    source_id: str

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


def risk_regions(
    region: OccludedRegion,
    v_obs_max: float,
    robot_speed: float,
    params: OcclusionParams = OcclusionParams(),
) -> list[RiskRegion]:
    """Place risk disks along both tangent lines of a shadow cone.

    Slot i on tangent j sits at range i*spacing + sqrt(d_obs^2 - r_obs^2)
    from the creating robot pose, the first slot landing exactly on the
    tangency point. The radius scales the hidden agent's assumed top speed
    by the robot's travel time to the slot, plus the source disk radius.
    """
    if not (np.isfinite(v_obs_max) and v_obs_max >= 0.0):
        raise ValueError("v_obs_max must be finite and non-negative")
    if not np.isfinite(robot_speed):
        raise ValueError("robot_speed must be finite")
    spacing = params.slot_spacing if params.slot_spacing is not None else region.r_obs
    d2 = region.x_rel**2 + region.y_rel**2
    base_range = math.sqrt(d2 - region.r_obs**2)
    # a reversing robot gets the same envelope as a stopped one
    denom = max(robot_speed, 0.0) + params.sigma
    rx, ry, rtheta = region.robot_pose
    c, s = math.cos(rtheta), math.sin(rtheta)
    out: list[RiskRegion] = []
    for j, m in ((1, region.m1), (2, region.m2)):
        norm = math.sqrt(1.0 + m * m)
        ux_body, uy_body = 1.0 / norm, m / norm
        ux = c * ux_body - s * uy_body
        uy = s * ux_body + c * uy_body
        for i in range(params.slots_per_tangent):
            rng = i * spacing + base_range
            travel = rng / denom
            if params.max_travel_time is not None:
                travel = min(travel, params.max_travel_time)
            out.append(
                RiskRegion(
                    x=rx + rng * ux,
                    y=ry + rng * uy,
                    radius=travel * v_obs_max + region.r_obs,
                    tangent_index=j,
                    slot_index=i,
                    source_id=region.source_id,
                )
            )
    return out


def _segment_blocked(p0: np.ndarray, p1: np.ndarray, disk: Disk) -> bool:
    """True when the segment p0 -> p1 comes within the disk radius."""
    d = p1 - p0
    dd = float(d @ d)
    rel = disk.center - p0
    t = 0.0 if dd == 0.0 else float(np.clip((rel @ d) / dd, 0.0, 1.0))
    closest = p0 + t * d
    return float(np.hypot(*(disk.center - closest))) <= disk.radius


def is_visible(
    robot: RobotState,
    target: Disk,
    disks: list[Disk],
    sensor_range: float = 10.0,
) -> bool:
    """Line-of-sight visibility of a disk center from the robot position.

    The target is visible when its center lies within sensor range and no
    other disk intersects the sight segment. The target's own disk never
    blocks itself.
    """
    p0 = np.array([robot.x, robot.y])
    p1 = target.center
    if float(np.hypot(*(p1 - p0))) > sensor_range:
        return False
    for other in disks:
        if other.obstacle_id == target.obstacle_id:
            continue
        if _segment_blocked(p0, p1, other):
            return False
    return True


@dataclass(frozen=True)
class RiskRegionConfig:
    """Risk-region set for one hypothesis branch.

    v_obs_max None marks the branch that neglects hidden agents entirely;
    its region tuple is empty. v_obs_max 0.0 is different: regions exist
    but collapse to the source disk radius.
    """

    v_obs_max: float | None
    regions: tuple[RiskRegion, ...] = field(default=())

    def __post_init__(self):
        if self.v_obs_max is None and self.regions:
            raise ValueError("the neglect branch carries no risk regions")


def build_configurations(
    robot: RobotState,
    robot_speed: float,
    disks: list[Disk],
    branch_specs,
    params: OcclusionParams = OcclusionParams(),
) -> list[RiskRegionConfig]:
    """One risk-region configuration per hypothesis branch.

    Shadow cones come from the nearest visible disks, capped at
    params.max_occluded_regions; disks with degenerate geometry are skipped
    for this cycle. Every branch shares the same cones and only differs in
    the assumed top speed used to size the regions.
    """
    visible = [
        d for d in disks if is_visible(robot, d, disks, params.sensor_range)
    ]
    visible.sort(
        key=lambda d: (float(np.hypot(d.x - robot.x, d.y - robot.y)), d.obstacle_id)
    )
    regions: list[OccludedRegion] = []
    for disk in visible:
        if len(regions) >= params.max_occluded_regions:
            break
        try:
            regions.append(occluded_region(robot, disk, params))
        except DegenerateGeometryError:
            continue
    configs = []
    for spec in branch_specs:
        if spec is None:
            configs.append(RiskRegionConfig(v_obs_max=None))
            continue
        placed: list[RiskRegion] = []
        for region in regions:
            placed.extend(risk_regions(region, spec, robot_speed, params))
        configs.append(RiskRegionConfig(v_obs_max=float(spec), regions=tuple(placed)))
    return configs
