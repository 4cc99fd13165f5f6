import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from cmpc.kinematics import RobotState
from cmpc.occlusion import (
    DegenerateGeometryError,
    Disk,
    OcclusionParams,
    build_configurations,
    is_visible,
    occluded_region,
    risk_regions,
    tangent_slopes,
    to_body,
    to_world,
)

from .oracles import line_point_distance, ray_cast_occluded, sampled_visibility

SQRT3_OVER_3 = 0.5773502691896257


def head_on_region():
    return occluded_region(
        RobotState(0.0, 0.0, 0.0), Disk("b", 2.0, 0.0, 1.0), OcclusionParams()
    )


class TestTangentSlopes:
    def test_head_on_symmetric(self):
        m1, m2 = tangent_slopes(2.0, 0.0, 1.0)
        assert m1 == pytest.approx(SQRT3_OVER_3, abs=1e-15)
        assert m2 == pytest.approx(-SQRT3_OVER_3, abs=1e-15)

    def test_ordering(self):
        m1, m2 = tangent_slopes(3.0, 1.5, 0.8)
        assert m1 >= m2

    def test_inside_disk_rejected(self):
        with pytest.raises(ValueError):
            tangent_slopes(0.5, 0.5, 1.0)
        with pytest.raises(ValueError):
            tangent_slopes(1.0, 0.0, 1.0)  # on the rim

    def test_near_vertical_degenerate(self):
        with pytest.raises(DegenerateGeometryError):
            tangent_slopes(1.0 + 1e-9, 5.0, 1.0)

    @given(
        st.floats(-8.0, 8.0),
        st.floats(-8.0, 8.0),
        st.floats(0.1, 2.0),
    )
    def test_both_lines_tangent(self, x, y, r):
        assume(x * x + y * y > r * r + 1e-3)
        assume(abs(x * x - r * r) > 1e-3)
        m1, m2 = tangent_slopes(x, y, r)
        assert line_point_distance(m1, x, y) == pytest.approx(r, abs=1e-9)
        assert line_point_distance(m2, x, y) == pytest.approx(r, abs=1e-9)


class TestFrames:
    @given(
        st.floats(-10, 10), st.floats(-10, 10), st.floats(-math.pi, math.pi),
        st.floats(-10, 10), st.floats(-10, 10),
    )
    def test_round_trip(self, rx, ry, rth, px, py):
        robot = RobotState(rx, ry, rth)
        p = np.array([px, py])
        back = to_world(robot, to_body(robot, p))
        assert np.allclose(back, p, atol=1e-12)

    def test_body_frame_axes(self):
        robot = RobotState(1.0, 1.0, math.pi / 2)
        body = to_body(robot, np.array([1.0, 3.0]))
        assert body == pytest.approx([2.0, 0.0], abs=1e-12)


class TestOccludedRegion:
    def test_membership_head_on(self):
        region = head_on_region()
        assert region.contains(np.array([3.0, 0.0]))
        assert not region.contains(np.array([-1.0, 0.0]))

    def test_boundary_excluded(self):
        region = head_on_region()
        # a point exactly on the upper tangent line is not inside
        on_line = np.array([2.0, region.m1 * 2.0])
        assert not region.contains(on_line)

    def test_boundary_matrix_shape(self):
        region = head_on_region()
        a = region.boundary_matrix
        assert a.shape == (3, 2)
        assert np.array_equal(a[:, 1], [1.0, -1.0, 0.0])

    def test_obstacle_behind_is_degenerate(self):
        with pytest.raises(DegenerateGeometryError):
            occluded_region(RobotState(0, 0, 0), Disk("b", -2.0, 0.0, 1.0))

    def test_obstacle_abeam_is_degenerate(self):
        with pytest.raises(DegenerateGeometryError):
            occluded_region(RobotState(0, 0, 0), Disk("b", 0.3, 2.0, 1.0))

    def test_robot_inside_disk_invalid(self):
        with pytest.raises(ValueError):
            occluded_region(RobotState(0, 0, 0), Disk("b", 0.2, 0.0, 1.0))

    def test_membership_matches_ray_cast(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            robot = RobotState(
                rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-math.pi, math.pi)
            )
            r = rng.uniform(0.3, 1.5)
            # place the disk ahead of the robot in its own frame
            x_rel = rng.uniform(r + 0.2, r + 6.0)
            y_rel = rng.uniform(-4.0, 4.0)
            center = to_world(robot, np.array([x_rel, y_rel]))
            disk = Disk("b", float(center[0]), float(center[1]), r)
            region = occluded_region(robot, disk)
            # sample strictly behind the disk (range beyond the far rim),
            # where the wedge test and the ray cast agree exactly
            d = math.hypot(x_rel, y_rel)
            ang_lo = math.atan(region.m2) - 0.4
            ang_hi = math.atan(region.m1) + 0.4
            angs = rng.uniform(ang_lo, ang_hi, size=50)
            rngs = rng.uniform(d + r + 0.01, d + r + 6.0, size=50)
            pts_body = np.stack([rngs * np.cos(angs), rngs * np.sin(angs)], axis=1)
            pts_world = to_world(robot, pts_body)
            got = region.contains(pts_world)
            want = np.array(
                [
                    ray_cast_occluded((robot.x, robot.y), center, r, p)
                    for p in pts_world
                ]
            )
            assert np.array_equal(got, want)


class TestRiskRegions:
    def test_frozen_head_on_example(self):
        # robot at origin facing +x, disk at (2, 0) with r = 1, robot speed
        # 1.0, assumed top speed 0.5, two slots per tangent with spacing 1.0;
        # expected centers/radii frozen from an independent scripted
        # evaluation of the construction
        params = OcclusionParams(slots_per_tangent=2, slot_spacing=1.0)
        region = occluded_region(RobotState(0, 0, 0), Disk("b", 2.0, 0.0, 1.0), params)
        regs = risk_regions(region, 0.5, 1.0, params)
        assert len(regs) == 4
        expected = [
            (1, 0, 1.5, 0.8660254037844386, 1.8659388099034482),
            (1, 1, 2.366025403784439, 1.3660254037844386, 2.3658888149029482),
            (2, 0, 1.5, -0.8660254037844386, 1.8659388099034482),
            (2, 1, 2.366025403784439, -1.3660254037844386, 2.3658888149029482),
        ]
        for reg, (j, i, x, y, rad) in zip(regs, expected):
            assert (reg.tangent_index, reg.slot_index) == (j, i)
            assert reg.x == pytest.approx(x, abs=1e-12)
            assert reg.y == pytest.approx(y, abs=1e-12)
            assert reg.radius == pytest.approx(rad, abs=1e-12)

    def test_zero_assumed_speed_gives_source_radius(self):
        region = head_on_region()
        for reg in risk_regions(region, 0.0, 1.3):
            assert reg.radius == 1.0

    def test_radius_scales_linearly_in_assumed_speed(self):
        region = head_on_region()
        r1 = risk_regions(region, 0.7, 1.3)
        r2 = risk_regions(region, 1.4, 1.3)
        for a, b in zip(r1, r2):
            assert (b.radius - 1.0) == pytest.approx(2 * (a.radius - 1.0), abs=1e-12)

    def test_slot_zero_sits_on_tangency_point(self):
        robot = RobotState(0.4, -0.2, 0.3)
        disk = Disk("b", 3.0, 1.0, 0.9)
        region = occluded_region(robot, disk)
        d2 = region.x_rel**2 + region.y_rel**2
        want_range = math.sqrt(d2 - 0.81)
        for reg in risk_regions(region, 0.5, 1.0):
            if reg.slot_index != 0:
                continue
            rng = np.hypot(reg.x - robot.x, reg.y - robot.y)
            assert rng == pytest.approx(want_range, abs=1e-9)
            # the slot-0 center is the tangency point, so it lies at exactly
            # the disk radius from the disk center
            assert np.hypot(reg.x - disk.x, reg.y - disk.y) == pytest.approx(
                0.9, abs=1e-9
            )

    def test_radii_monotone_along_tangent(self):
        region = occluded_region(
            RobotState(0, 0, 0),
            Disk("b", 4.0, 0.5, 1.0),
            OcclusionParams(slots_per_tangent=5),
        )
        regs = risk_regions(region, 0.8, 1.5, OcclusionParams(slots_per_tangent=5))
        for j in (1, 2):
            radii = [r.radius for r in regs if r.tangent_index == j]
            assert all(b >= a for a, b in zip(radii, radii[1:]))
            assert all(r >= 1.0 for r in radii)

    def test_reversing_robot_same_as_stopped(self):
        region = head_on_region()
        back = risk_regions(region, 0.5, -0.4)
        stop = risk_regions(region, 0.5, 0.0)
        for a, b in zip(back, stop):
            assert a.radius == b.radius

    @given(st.floats(-math.pi, math.pi), st.floats(-5, 5), st.floats(-5, 5))
    def test_rigid_motion_equivariance(self, dth, dx, dy):
        base_robot = RobotState(0.0, 0.0, 0.0)
        base_disk = Disk("b", 2.5, 0.4, 0.8)
        moved_robot = RobotState(dx, dy, dth)
        c, s = math.cos(dth), math.sin(dth)
        moved_disk = Disk(
            "b", 2.5 * c - 0.4 * s + dx, 2.5 * s + 0.4 * c + dy, 0.8
        )
        r0 = risk_regions(occluded_region(base_robot, base_disk), 0.6, 1.0)
        r1 = risk_regions(occluded_region(moved_robot, moved_disk), 0.6, 1.0)
        for a, b in zip(r0, r1):
            assert b.radius == pytest.approx(a.radius, abs=1e-9)
            want = (a.x * c - a.y * s + dx, a.x * s + a.y * c + dy)
            assert (b.x, b.y) == pytest.approx(want, abs=1e-9)

    def test_rejects_bad_speeds(self):
        region = head_on_region()
        with pytest.raises(ValueError):
            risk_regions(region, -0.1, 1.0)
        with pytest.raises(ValueError):
            risk_regions(region, math.nan, 1.0)

    def test_travel_time_cap_bounds_radius(self):
        region = head_on_region()
        capped = OcclusionParams(max_travel_time=6.0)
        # crawling robot: raw quotient would exceed the cap at every slot
        regs = risk_regions(region, 1.0, 0.01, capped)
        for r in regs:
            assert r.radius == pytest.approx(6.0 * 1.0 + region.r_obs)
        # cruise speed: quotient below the cap, formula unchanged
        fast_c = risk_regions(region, 1.0, 2.0, capped)
        fast_u = risk_regions(region, 1.0, 2.0)
        for a, b in zip(fast_c, fast_u):
            assert a.radius == b.radius

    def test_travel_time_cap_preserves_speed_linearity(self):
        region = head_on_region()
        params = OcclusionParams(max_travel_time=6.0)
        lo = risk_regions(region, 0.3, 0.05, params)
        hi = risk_regions(region, 0.9, 0.05, params)
        for a, b in zip(lo, hi):
            assert (b.radius - region.r_obs) == pytest.approx(
                3.0 * (a.radius - region.r_obs), abs=1e-12
            )


class TestVisibility:
    def test_within_range_clear_line(self):
        robot = RobotState(0, 0, 0)
        target = Disk("t", 5.0, 0.0, 1.0)
        assert is_visible(robot, target, [target], 10.0)

    def test_beyond_range(self):
        robot = RobotState(0, 0, 0)
        target = Disk("t", 11.0, 0.0, 1.0)
        assert not is_visible(robot, target, [target], 10.0)

    def test_blocked_by_other_disk(self):
        robot = RobotState(0, 0, 0)
        target = Disk("t", 8.0, 0.0, 1.0)
        blocker = Disk("b", 4.0, 0.0, 1.0)
        assert not is_visible(robot, target, [target, blocker], 10.0)

    def test_target_disk_never_blocks_itself(self):
        robot = RobotState(0, 0, 0)
        target = Disk("t", 1.5, 0.0, 1.2)  # robot nearly touching a big disk
        assert is_visible(robot, target, [target], 10.0)

    def test_matches_sampling_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(40):
            robot = RobotState(rng.uniform(-2, 2), rng.uniform(-2, 2), 0.0)
            disks = [
                Disk(
                    f"d{i}",
                    rng.uniform(-8, 8),
                    rng.uniform(-8, 8),
                    rng.uniform(0.2, 1.2),
                )
                for i in range(5)
            ]
            for target in disks:
                if np.hypot(target.x - robot.x, target.y - robot.y) > 9.5:
                    continue
                blockers = [
                    (d.x, d.y, d.radius)
                    for d in disks
                    if d.obstacle_id != target.obstacle_id
                ]
                want = sampled_visibility(
                    (robot.x, robot.y), (target.x, target.y), blockers
                )
                got = is_visible(robot, target, disks, 10.0)
                assert got == want


class TestBuildConfigurations:
    def test_neglect_branch_has_no_regions(self):
        robot = RobotState(0, 0, 0)
        disks = [Disk("a", 3.0, 0.0, 1.0)]
        configs = build_configurations(robot, 1.0, disks, [None, 0.5])
        assert configs[0].v_obs_max is None
        assert configs[0].regions == ()
        assert configs[1].v_obs_max == 0.5
        assert len(configs[1].regions) == 4

    def test_region_cap_uses_nearest(self):
        robot = RobotState(0, 0, 0)
        disks = [
            Disk("far", 8.0, 2.0, 0.8),
            Disk("near", 3.0, -1.0, 0.8),
            Disk("mid", 5.0, 2.5, 0.8),
        ]
        params = OcclusionParams(max_occluded_regions=2)
        (config,) = build_configurations(robot, 1.0, disks, [0.5], params)
        sources = {r.source_id for r in config.regions}
        assert sources == {"near", "mid"}
        assert len(config.regions) == 8

    def test_degenerate_disks_skipped(self):
        robot = RobotState(0, 0, 0)
        disks = [Disk("behind", -3.0, 0.0, 1.0), Disk("ahead", 4.0, 0.0, 1.0)]
        (config,) = build_configurations(robot, 1.0, disks, [1.0])
        assert {r.source_id for r in config.regions} == {"ahead"}

    def test_invisible_disks_ignored(self):
        robot = RobotState(0, 0, 0)
        disks = [
            Disk("wall", 3.0, 0.0, 1.0),
            Disk("hidden", 7.0, 0.0, 1.0),  # behind the wall
        ]
        (config,) = build_configurations(robot, 1.0, disks, [1.0])
        assert {r.source_id for r in config.regions} == {"wall"}

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        robot = RobotState(0, 0, 0.1)
        disks = [
            Disk(f"d{i}", rng.uniform(2, 9), rng.uniform(-3, 3), 0.7)
            for i in range(6)
        ]
        a = build_configurations(robot, 1.2, disks, [None, 0.5, 1.0])
        b = build_configurations(robot, 1.2, disks, [None, 0.5, 1.0])
        assert a == b
