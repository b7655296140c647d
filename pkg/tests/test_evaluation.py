"""Trajectory metrics, the odometry pipeline and the benchmark harness."""

import math

import numpy as np
import pytest

from lidarodom.config import PipelineConfig
from lidarodom.evaluation import (Metrics, align_by_time, benchmark, compute_metrics, run_pipeline,
                                  write_benchmark_csv, write_run_outputs)
from lidarodom.exceptions import NoTemporalOverlap
from lidarodom.navfusion import LocalPose, wrap_angle
from lidarodom.sim import SimDataset


def _track(n=200, dyaw=0.0, speed=1.0, shift=(0.0, 0.0)):
    poses, x, y, yaw = [], 0.0, 0.0, 0.0
    for i in range(n + 1):
        poses.append(LocalPose(0.1 * i, x + shift[0], y + shift[1], wrap_angle(yaw)))
        x += speed * 0.1 * math.cos(yaw)
        y += speed * 0.1 * math.sin(yaw)
        yaw += dyaw
    return poses


# --- metrics -----------------------------------------------------------------

def test_identity_metrics_are_zero():
    truth = _track(dyaw=0.01)
    m = compute_metrics(truth, truth)
    assert (m.final_yaw_drift, m.rpe_translation_rmse, m.rpe_yaw_rmse, m.ate_rmse) == (0, 0, 0, 0)
    assert m.travelled_distance_est == m.travelled_distance_truth == pytest.approx(20.0)


def test_constant_yaw_drift_reaches_twenty_degrees():
    truth = _track(200)
    est = [LocalPose(p.t, p.x, p.y, wrap_angle(p.yaw + math.radians(0.1) * i)) for i, p in enumerate(truth)]
    m = compute_metrics(est, truth)
    assert m.final_yaw_drift == pytest.approx(20.0, abs=1e-6)
    assert m.rpe_yaw_rmse == pytest.approx(0.1, abs=1e-9)


def test_start_aligned_shift_has_zero_ate():
    truth = _track(dyaw=0.005)
    m = compute_metrics(_track(dyaw=0.005, shift=(1.0, 0.0)), truth)
    assert m.ate_rmse == pytest.approx(0.0, abs=1e-9)


def test_drift_shows_in_ate():
    truth = _track()
    est = [LocalPose(p.t, p.x * 1.1, p.y, p.yaw) for p in truth]
    m = compute_metrics(est, truth)
    assert m.ate_rmse > 0.5 and m.travelled_distance_est == pytest.approx(22.0)


def test_no_temporal_overlap():
    truth = _track(10)
    later = [LocalPose(p.t + 100, p.x, p.y, p.yaw) for p in truth]
    with pytest.raises(NoTemporalOverlap):
        compute_metrics(later, truth)
    with pytest.raises(NoTemporalOverlap):
        compute_metrics([], truth)


def test_align_by_time_nearest_within_half_period():
    truth = _track(10)
    est = [LocalPose(0.04, 0, 0), LocalPose(0.26, 0, 0), LocalPose(0.55, 0, 0)]
    pairs = align_by_time(est, truth)
    assert [round(q.t, 6) for _, q in pairs] == [0.0, 0.3, 0.5]


def test_metrics_validation():
    with pytest.raises(ValueError):
        Metrics(ate_rmse=-1)
    with pytest.raises(ValueError):
        Metrics(match_failure_fraction=1.5)


# --- pipeline ----------------------------------------------------------------

def test_identical_scans_give_identity(bridge_scan):
    truth = [LocalPose(0.1 * i, 0.0, 0.0, 0.0) for i in range(4)]
    ds = SimDataset([(0.1 * i, bridge_scan) for i in range(4)], [], truth)
    for method in ("planar", "full6d"):
        report = run_pipeline(ds, method)
        assert all(r.status == "ok" for r in report.per_pair)
        for r in report.per_pair:
            assert abs(r.yaw) < 1e-6 and math.hypot(r.dx, r.dy) < 1e-3
        assert report.metrics.final_yaw_drift < 1e-4


@pytest.fixture(scope="module")
def planar_report(short_dataset):
    return run_pipeline(short_dataset, "planar", seed=0)


def test_per_pair_length(planar_report, short_dataset):
    assert len(planar_report.per_pair) == len(short_dataset.scans) - 1
    assert all(r.status == "ok" for r in planar_report.per_pair)


def test_trajectory_follows_truth_through_blackout(planar_report, short_dataset):
    cfg = PipelineConfig().fusion
    traj = planar_report.trajectory
    for a, b in zip(traj, traj[1:]):
        assert math.hypot(b.x - a.x, b.y - a.y) <= cfg.max_speed * (b.t - a.t) + 0.01
    truth = {round(p.t, 6): p for p in short_dataset.truth}
    errs = [math.hypot(p.x - truth[round(p.t, 6)].x, p.y - truth[round(p.t, 6)].y)
            for p in traj if round(p.t, 6) in truth]
    assert max(errs) < 1.5
    assert planar_report.metrics.travelled_distance_est == pytest.approx(5.8, abs=0.3)


def test_anomalous_scan_is_bridged(short_dataset):
    scans = list(short_dataset.scans)
    t5, c5 = scans[5]
    scans[5] = (t5, c5.subset(np.arange(0, len(c5), 10)))
    ds = SimDataset(scans, short_dataset.gps_log, short_dataset.truth, short_dataset.seed)
    report = run_pipeline(ds, "planar")
    statuses = [r.status for r in report.per_pair]
    assert statuses[4] == "bridged" and "AnomalousScan" in report.per_pair[4].reason
    assert statuses.count("ok") == len(statuses) - 1
    assert report.metrics.match_failure_fraction == pytest.approx(1 / len(statuses))
    prev = report.per_pair[3]
    assert (report.per_pair[4].dx, report.per_pair[4].yaw) == pytest.approx((prev.dx, prev.yaw))


def test_pipeline_is_deterministic(short_dataset_dir, tmp_path):
    outputs = []
    for k in range(2):
        report = run_pipeline(short_dataset_dir, "planar", seed=3)
        files = write_run_outputs(tmp_path / str(k), report)
        outputs.append({f.name: f.read_bytes() for f in files})
    assert outputs[0] == outputs[1]
    assert sorted(outputs[0]) == ["metrics.csv", "per_pair.csv", "trajectory.csv"]


def test_timing_written_on_request(planar_report, tmp_path):
    files = write_run_outputs(tmp_path, planar_report, timing=True)
    assert (tmp_path / "timing.csv") in files
    assert "match" in (tmp_path / "timing.csv").read_text()


def test_unknown_method(short_dataset):
    with pytest.raises(ValueError):
        run_pipeline(short_dataset, "sonar")


# --- benchmark ---------------------------------------------------------------

def test_benchmark_repetitions(short_dataset, tmp_path):
    rep = benchmark(short_dataset, "planar", repetitions=3, max_pairs=4)
    assert len(rep.per_pair_seconds) == 4 and rep.end_to_end_hz > 0
    assert {r.stage for r in rep.rows} == {"project", "rotate_correlate", "end_to_end"}
    assert all(r.repetitions == 3 and r.min_s <= r.mean_s for r in rep.rows)
    write_benchmark_csv(tmp_path / "b.csv", rep)
    assert (tmp_path / "b.csv").read_text().startswith("pair,points,bucket,method,stage,min_s,mean_s,repetitions")
    with pytest.raises(ValueError):
        benchmark(short_dataset, "planar", repetitions=0)
