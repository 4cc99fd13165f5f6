import dataclasses
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmpc.metrics import (
    BASELINE_KINDS,
    AggregateReport,
    MetricsReport,
    baseline_config,
    consistency_metrics,
    episode_metrics,
    lateral_velocity,
    results_csv,
    run_baseline,
    sweep_consensus,
    sweep_csv,
    write_reports,
)
from cmpc.planner import PlannerConfig
from cmpc.world import Scenario, SimLog

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


class TestLateralVelocity:
    def test_heading_along_reference_gives_zero(self):
        states = [(0.0, 0.0, 0.0), (0.5, 0.0, 0.0)]
        controls = [(1.8, 0.0), (1.8, 0.0)]
        assert np.allclose(lateral_velocity(states, controls), 0.0)

    def test_perpendicular_heading_gives_full_speed(self):
        out = lateral_velocity([(0.0, 0.0, math.pi / 2)], [(1.0, 0.0)])
        assert out[0] == pytest.approx(1.0)

    def test_thirty_degree_heading(self):
        out = lateral_velocity([(0.0, 0.0, math.pi / 6)], [(1.8, 0.0)])
        assert out[0] == pytest.approx(0.9)

    def test_tangent_comes_from_the_path(self):
        # heading pi/6 off a straight +x path, same as the no-path case
        path = [(0.0, 0.0), (20.0, 0.0)]
        out = lateral_velocity([(3.0, 0.4, math.pi / 6)], [(1.8, 0.0)], path)
        assert out[0] == pytest.approx(0.9)
        # on a +y leg the same heading is measured against pi/2
        bent = [(0.0, 0.0), (0.0, 20.0)]
        out = lateral_velocity([(0.2, 3.0, math.pi / 2)], [(1.8, 0.0)], bent)
        assert out[0] == pytest.approx(0.0, abs=1e-12)

    def test_mismatched_lengths_raise(self):
        with pytest.raises(ValueError, match="pair up"):
            lateral_velocity([(0, 0, 0)], [(1, 0), (1, 0)])


def naive_window_ptp(v, dt):
    # independent reimplementation: explicit loop over inclusive 1 s windows
    v = list(v)
    win = min(int(round(1.0 / dt)) + 1, len(v))
    best = 0.0
    for i in range(len(v) - win + 1):
        chunk = v[i : i + win]
        best = max(best, max(chunk) - min(chunk))
    return best


class TestConsistencyMetrics:
    def test_constant_series_scores_zero(self):
        assert consistency_metrics([0.3] * 12, 0.25) == (0.0, 0.0)

    def test_unit_step(self):
        ptp, acc = consistency_metrics([0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 0.25)
        assert ptp == pytest.approx(1.0)
        assert acc == pytest.approx(4.0)

    def test_window_limits_the_range(self):
        # +1 spike and -1 spike more than one second apart never share a window
        v = [0.0] * 12
        v[0], v[10] = 1.0, -1.0
        ptp, _ = consistency_metrics(v, 0.25)
        assert ptp == pytest.approx(1.0)

    def test_empty_and_singleton(self):
        assert consistency_metrics([], 0.25) == (0.0, 0.0)
        assert consistency_metrics([0.7], 0.25) == (0.7 - 0.7, 0.0)

    def test_nonpositive_dt_rejected(self):
        with pytest.raises(ValueError, match="dt"):
            consistency_metrics([0.0, 1.0], 0.0)

    def test_sampled_sinusoid_peaks_near_double_amplitude(self):
        t = np.arange(0, 8, 0.25)
        v = 0.4 * np.sin(2 * math.pi * t / 2.0)  # 2 s period, half fits a window
        ptp, _ = consistency_metrics(v, 0.25)
        assert 0.4 < ptp <= 0.8 + 1e-12

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=40),
        st.sampled_from([0.1, 0.2, 0.25, 0.5]),
    )
    def test_matches_naive_window_scan(self, v, dt):
        ptp, acc = consistency_metrics(v, dt)
        assert ptp == pytest.approx(naive_window_ptp(v, dt), abs=1e-12)
        if len(v) > 1:
            ref = max(abs(b - a) for a, b in zip(v, v[1:])) / dt
            assert acc == pytest.approx(ref, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(st.floats(-3, 3, allow_nan=False), min_size=6, max_size=30),
        st.integers(min_value=1, max_value=8),
    )
    def test_stationary_padding_changes_nothing(self, v, pad):
        # holding the first or last value longer adds no new excursions
        base = consistency_metrics(v, 0.25)
        lead = consistency_metrics([v[0]] * pad + v, 0.25)
        tail = consistency_metrics(v + [v[-1]] * pad, 0.25)
        assert lead == pytest.approx(base, abs=1e-12)
        assert tail == pytest.approx(base, abs=1e-12)


def synthetic_log(v_lats, solve_ms=5.0, failures=0):
    records = []
    for k, v in enumerate(v_lats):
        failed = k < failures
        records.append(
            {
                "time": 0.25 * k,
                "state": [0.0, 0.0, 0.0],
                "control": [0.0, 0.0],
                "v_lat": v,
                "branch_count": 3,
                "solve_ms": 0.0 if failed else solve_ms,
                "converged": not failed,
                "planner_failure": failed,
                "collision_flag": False,
            }
        )
    return SimLog(
        scenario_name="synthetic",
        seed=3,
        dt=0.25,
        records=records,
        planner_failures=failures,
        duration=0.25 * len(v_lats),
    )


class TestEpisodeMetrics:
    def test_scores_whole_episode(self):
        log = synthetic_log([0.0, 0.0, 1.0, 1.0], solve_ms=8.0)
        rep = episode_metrics(log)
        assert rep.max_lat_vel_variance == pytest.approx(1.0)
        assert rep.peak_lat_acc == pytest.approx(4.0)
        assert rep.avg_solve_ms == pytest.approx(8.0)
        assert rep.duration_s == pytest.approx(1.0)
        assert rep.converged_ratio == pytest.approx(1.0)
        assert rep.seed == 3

    def test_failed_cycles_excluded_from_solve_average(self):
        log = synthetic_log([0.0] * 6, solve_ms=6.0, failures=2)
        rep = episode_metrics(log)
        assert rep.avg_solve_ms == pytest.approx(6.0)
        assert rep.planner_failures == 2
        assert rep.converged_ratio == pytest.approx(4 / 6)

    def test_negative_metric_rejected(self):
        with pytest.raises(ValueError, match="negative"):
            MetricsReport(
                collision=False,
                max_lat_vel_variance=-0.1,
                peak_lat_acc=0.0,
                avg_solve_ms=0.0,
                duration_s=0.0,
            )


class TestBaselineConfig:
    def test_full_method_keeps_three_branches_and_two_seconds(self):
        cfg = baseline_config("cmpc")
        assert len(cfg.branch_speeds) == 3
        assert cfg.consensus_sec == pytest.approx(2.0)

    def test_zero_consensus_variant(self):
        cfg = baseline_config("cmpc_0")
        assert len(cfg.branch_speeds) == 3
        assert cfg.consensus_sec == 0.0

    def test_single_hypothesis_variants(self):
        no_risk = baseline_config("single_hyp_no_risk")
        risk = baseline_config("single_hyp_risk")
        assert no_risk.branch_speeds == (None,)
        assert risk.branch_speeds == (1.0,)
        assert no_risk.consensus_sec == risk.consensus_sec == 0.0

    def test_base_overrides_survive(self):
        base = PlannerConfig(horizon_steps=16)
        assert baseline_config("cmpc", base).horizon_steps == 16

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown baseline kind"):
            baseline_config("mpc_classic")


@pytest.fixture(scope="module")
def open_scenario():
    return Scenario.from_json(SCENARIO_DIR / "open_straight.json")


@pytest.fixture(scope="module")
def open_runs(open_scenario):
    return {
        kind: run_baseline(kind, open_scenario, seeds=[0])
        for kind in sorted(BASELINE_KINDS)
    }


class TestRunBaseline:
    def test_every_variant_clears_an_empty_road(self, open_runs):
        for kind, agg in open_runs.items():
            assert not agg.collision, kind
            assert agg.summary()["reached_goal"] == 1, kind
            assert agg.mean("max_lat_vel_variance") < 0.05, kind

    def test_aggregate_bookkeeping(self, open_runs):
        agg = open_runs["cmpc"]
        assert agg.seeds == [0]
        assert agg.collisions == 0
        s = agg.stat("peak_lat_acc")
        assert s["min"] <= s["mean"] <= s["max"]

    def test_parallel_equals_sequential_modulo_timing(self, open_scenario):
        seq = run_baseline("cmpc", open_scenario, seeds=[0, 1], jobs=1)
        par = run_baseline("cmpc", open_scenario, seeds=[0, 1], jobs=2)
        for a, b in zip(seq.reports, par.reports):
            assert a.seed == b.seed
            assert a.collision == b.collision
            assert a.max_lat_vel_variance == b.max_lat_vel_variance
            assert a.peak_lat_acc == b.peak_lat_acc
            assert a.converged_ratio == b.converged_ratio
            assert a.duration_s == b.duration_s

    def test_sweep_zero_cell_is_the_ablation(self, open_scenario):
        rows = sweep_consensus(open_scenario, seeds=[0], lengths=(0.0, 1.0))
        assert [length for length, _ in rows] == [0.0, 1.0]
        assert rows[0][1].kind == "tc0s"
        assert rows[1][1].kind == "tc1s"
        for _, agg in rows:
            assert not agg.collision


class TestReportEmission:
    def make_aggregate(self):
        reports = [
            MetricsReport(
                collision=bool(i),
                max_lat_vel_variance=0.2 * (i + 1),
                peak_lat_acc=0.5,
                avg_solve_ms=12.0,
                duration_s=20.0,
                reached_goal=not i,
                converged_ratio=0.95,
                seed=i,
            )
            for i in range(2)
        ]
        return AggregateReport(kind="cmpc", scenario="toy", reports=reports)

    def test_results_csv_rows(self):
        text = results_csv([self.make_aggregate()])
        lines = text.strip().split("\n")
        assert lines[0].startswith("Algorithm,Scenario,Seed,Collision")
        assert len(lines) == 3
        assert lines[1].split(",")[3] == "NO"
        assert lines[2].split(",")[3] == "YES"

    def test_sweep_csv_rows(self):
        agg = self.make_aggregate()
        text = sweep_csv([(0.0, agg), (2.0, agg)])
        lines = text.strip().split("\n")
        assert lines[0].startswith("Consensus Segment Length (s)")
        assert len(lines) == 3
        first = lines[1].split(",")
        assert first[0] == "0"
        assert float(first[1]) == pytest.approx(0.3)
        assert first[-2:] == ["1", "2"]

    def test_json_summary_round_trips(self):
        agg = self.make_aggregate()
        data = json.loads(agg.to_json())
        assert data["collisions"] == 1
        assert data["episodes"] == 2
        assert data["max_lat_vel_variance"]["mean"] == pytest.approx(0.3)

    def test_write_reports_emits_files(self, tmp_path):
        paths = write_reports([self.make_aggregate()], tmp_path)
        assert (tmp_path / "results.csv").exists()
        assert (tmp_path / "cmpc_toy.json").exists()
        assert set(paths) == {tmp_path / "results.csv", tmp_path / "cmpc_toy.json"}
