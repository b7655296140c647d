"""Odometry runs over datasets, trajectory metrics and throughput benchmarks."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .config import PipelineConfig
from .exceptions import AnomalousScan, FormatError, LidarOdomError, NmeaError, NoTemporalOverlap
from .geometry import RigidTransform, planar_transform, yaw_of
from .navfusion import (
    FusedState,
    LocalPose,
    PoseSource,
    fuse_step,
    geodetic_to_local,
    parse_nmea_gga,
    wrap_angle,
    write_trajectory_csv,
)
from .planar import KeyframeMatcher, PlanarMotion, project_to_image, rotation_search
from .preprocess import anomaly_gate, crop_range
from .registration import register_scans
from .sim import SimDataset, read_dataset

METHODS = ("full6d", "planar")


# --- metrics -----------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    final_yaw_drift: float = 0.0  # degrees
    travelled_distance_est: float = 0.0
    travelled_distance_truth: float = 0.0
    rpe_translation_rmse: float = 0.0  # metres per pair
    rpe_yaw_rmse: float = 0.0  # degrees per pair
    ate_rmse: float = 0.0
    match_failure_fraction: float = 0.0
    throughput_hz: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v >= 0):
                raise ValueError(f"{f.name} must be non-negative, got {v}")
        if self.match_failure_fraction > 1:
            raise ValueError("match_failure_fraction must lie in [0, 1]")


def align_by_time(estimated: Sequence[LocalPose], truth: Sequence[LocalPose], tolerance: Optional[float] = None):
    """Pairs ``(est, truth)`` matched to the nearest truth stamp within ``tolerance``.

    The default tolerance is half the median truth period.
    """
    if not estimated or not truth:
        raise NoTemporalOverlap("empty trajectory")
    tt = np.array([p.t for p in truth])
    if tolerance is None:
        tolerance = 0.5 * float(np.median(np.diff(tt))) if len(tt) > 1 else 1e-6
    pairs = []
    for p in estimated:
        k = int(np.searchsorted(tt, p.t))
        best = min((j for j in (k - 1, k) if 0 <= j < len(tt)), key=lambda j: abs(tt[j] - p.t))
        if abs(tt[best] - p.t) <= tolerance + 1e-9:
            pairs.append((p, truth[best]))
    if not pairs:
        raise NoTemporalOverlap("no estimated pose lies within tolerance of a truth stamp")
    return pairs


def compute_metrics(estimated: Sequence[LocalPose], truth: Sequence[LocalPose], match_failure_fraction: float = 0.0,
                    throughput_hz: float = 0.0, tolerance: Optional[float] = None) -> Metrics:
    """Drift and error statistics of a trajectory against ground truth.

    The estimate is aligned to the truth by its first matched pose only, so
    accumulated drift is preserved. RPE compares consecutive relative
    motions; travelled distance sums consecutive position deltas.
    """
    pairs = align_by_time(estimated, truth, tolerance)
    e = np.array([(p.x, p.y, p.yaw) for p, _ in pairs])
    r = np.array([(q.x, q.y, q.yaw) for _, q in pairs])
    # start alignment: rotate estimated displacements from the first pose by the initial yaw offset;
    # comparing displacements (not absolute positions) keeps identical tracks exactly at zero error
    d_yaw = wrap_angle(r[0, 2] - e[0, 2])
    c, s = math.cos(d_yaw), math.sin(d_yaw)
    de, dr = e[:, :2] - e[0, :2], r[:, :2] - r[0, :2]
    de = np.column_stack([c * de[:, 0] - s * de[:, 1], s * de[:, 0] + c * de[:, 1]])
    ate = float(np.sqrt(np.mean(np.sum((de - dr) ** 2, axis=1))))
    drift = abs(math.degrees(wrap_angle((e[-1, 2] - e[0, 2]) - (r[-1, 2] - r[0, 2]))))

    dist_est = float(np.sum(np.linalg.norm(np.diff(e[:, :2], axis=0), axis=1)))
    dist_truth = float(np.sum(np.linalg.norm(np.diff(r[:, :2], axis=0), axis=1)))

    def relative(track):
        step = np.diff(track[:, :2], axis=0)
        cy, sy = np.cos(track[:-1, 2]), np.sin(track[:-1, 2])
        local = np.column_stack([cy * step[:, 0] + sy * step[:, 1], -sy * step[:, 0] + cy * step[:, 1]])
        return local, np.diff(track[:, 2])

    rpe_t_rmse = rpe_y_rmse = 0.0
    if len(e) > 1:
        (te, ye), (tr, yr) = relative(e), relative(r)
        # |rel_r^-1 rel_e| translation equals |te - tr| since rel_r's rotation preserves length
        rpe_t = np.linalg.norm(te - tr, axis=1)
        rpe_y = np.degrees(np.remainder(ye - yr + np.pi, 2 * np.pi) - np.pi)
        rpe_t_rmse = float(np.sqrt(np.mean(rpe_t ** 2)))
        rpe_y_rmse = float(np.sqrt(np.mean(rpe_y ** 2)))
    return Metrics(drift, dist_est, dist_truth, rpe_t_rmse, rpe_y_rmse, ate, match_failure_fraction, throughput_hz)


# --- pipeline ----------------------------------------------------------------

@dataclass(frozen=True)
class PairRecord:
    """Outcome for the pair (scan ``index - 1``, scan ``index``).

    ``yaw``, ``dx`` and ``dy`` are the vehicle ego-motion between the two
    stamps. ``status`` is ``ok``, ``bridged`` (constant-velocity fill) or
    ``frozen`` (second failure in a row, zero motion).
    """

    index: int
    t: float
    status: str
    reason: str
    yaw: float
    dx: float
    dy: float
    quality: float
    points_a: int
    points_b: int


@dataclass
class RunReport:
    trajectory: list  # fused LocalPose per output
    odometry: list  # dead-reckoned LocalPose per scan
    per_pair: list  # PairRecord per scan pair
    metrics: Optional[Metrics]
    fused_metrics: Optional[Metrics]
    timing: dict = field(default_factory=dict)  # stage -> (mean, p50, p95) seconds
    truth: list = field(default_factory=list)
    method: str = "planar"


def _timing_stats(samples: dict) -> dict:
    out = {}
    for stage, values in samples.items():
        v = np.asarray(values, dtype=float)
        if len(v):
            out[stage] = (float(v.mean()), float(np.percentile(v, 50)), float(np.percentile(v, 95)))
    return out


def _parse_fixes(ds: SimDataset):
    fixes = []
    for lineno, (t, sentence) in enumerate(ds.gps_log, start=1):
        if sentence is None:
            continue
        try:
            fixes.append((t, parse_nmea_gga(sentence)))
        except NmeaError as exc:
            raise FormatError("gps.log", lineno, str(exc)) from None
    return fixes


def _relative(method: str, a, b, cfg: PipelineConfig, seed: int, timings: dict, matcher=None):
    """Ego-motion of the vehicle from scan ``a`` to scan ``b`` and a quality value.

    For the planar method ``matcher`` is a :class:`KeyframeMatcher` built on ``a``.
    """
    t0 = time.perf_counter()
    if method == "planar":
        m = matcher.match(b)
        timings.setdefault("match", []).append(time.perf_counter() - t0)
        return m.inverse().transform, m.score
    reg = replace(cfg.registration, seed=seed)
    res = register_scans(a, b, cfg.preprocess, reg, cfg.features)
    for stage, v in res.timings.items():
        timings.setdefault(stage, []).append(v)
    timings.setdefault("match", []).append(time.perf_counter() - t0)
    return res.transform.inverse(), res.motion.fitness


def _load(dataset) -> SimDataset:
    return dataset if isinstance(dataset, SimDataset) else read_dataset(dataset)


def scan_odometry(ds: SimDataset, method: str, cfg: PipelineConfig, seed: int = 0, timings: dict = None):
    """Per-scan vehicle poses (relative to scan 0) and per-pair records.

    Each scan is matched against a keyframe that is renewed every
    ``keyframe_interval`` scans, so quantisation errors of single matches
    do not accumulate pair by pair. A failed match is retried against the
    previous scan; if that fails too, the pair is bridged by constant
    velocity (once) and then frozen. Scans rejected by the anomaly gate are
    never used as keyframes or as the gate's reference count.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    timings = {} if timings is None else timings
    interval = cfg.pipeline.planar_keyframe_interval if method == "planar" else cfg.pipeline.full6d_keyframe_interval
    scans = ds.scans
    poses = [RigidTransform.identity()]
    records = []
    if not scans:
        return poses[:0], records
    planar_cfg = replace(cfg.planar, subpixel=True) if cfg.pipeline.planar_subpixel else cfg.planar
    matchers = {}

    def matcher_for(idx):
        if method != "planar":
            return None
        if idx not in matchers:
            t0 = time.perf_counter()
            matchers[idx] = KeyframeMatcher(scans[idx][1], planar_cfg, cfg.preprocess)
            timings.setdefault("keyframe", []).append(time.perf_counter() - t0)
        return matchers[idx]

    key_idx = 0
    last_good = 0  # last scan accepted by the anomaly gate and matched (or restarted from)
    last_step = None
    prev_failed = False
    for i in range(1, len(scans)):
        t_i, cur = scans[i]
        pose = None
        reason = ""
        quality = 0.0
        anomalous = not anomaly_gate(len(scans[last_good][1]), len(cur), cfg.preprocess.anomaly_ratio)
        if anomalous:
            exc = AnomalousScan(len(scans[last_good][1]), len(cur))
            reason = f"{type(exc).__name__}: {exc}"
        else:
            for ref in dict.fromkeys((key_idx, last_good)):
                try:
                    rel, quality = _relative(method, scans[ref][1], cur, cfg, seed + i, timings, matcher_for(ref))
                except LidarOdomError as exc:
                    reason = f"{type(exc).__name__}: {exc}"
                    continue
                pose = poses[ref] @ rel
                reason = ""
                break
        if pose is not None:
            step = poses[i - 1].inverse() @ pose
            status = "ok"
            last_step = step
            prev_failed = False
            last_good = i
            if i - key_idx >= interval:
                key_idx = i
        else:
            if last_step is not None and not prev_failed:
                step, status = last_step, "bridged"
            else:
                step, status = RigidTransform.identity(), "frozen"
            pose = poses[i - 1] @ step
            prev_failed = True
            if not anomalous:
                # the scan itself looks normal: restart the keyframe chain from it
                key_idx = last_good = i
        for idx in [k for k in matchers if k not in (key_idx, last_good)]:
            del matchers[idx]
        poses.append(pose)
        records.append(PairRecord(i, t_i, status, reason, float(yaw_of(step)), float(step.translation[0]),
                                  float(step.translation[1]), float(quality), len(scans[i - 1][1]), len(cur)))
    return poses, records


def run_pipeline(dataset, method: str = "planar", config: PipelineConfig = None, seed: int = 0) -> RunReport:
    """Odometry over a dataset, fused with its GPS log, with metrics against truth.

    ``dataset`` is a dataset directory or an in-memory :class:`SimDataset`.

    Raises
    ------
    DatasetNotFound, FormatError
        Missing or malformed dataset files.
    """
    cfg = PipelineConfig() if config is None else config
    ds = _load(dataset)
    timings = {}
    t_start = time.perf_counter()
    poses, records = scan_odometry(ds, method, cfg, seed, timings)
    elapsed = time.perf_counter() - t_start
    fixes = _parse_fixes(ds)

    stamps = ds.stamps
    ref = ds.reference
    # the dead-reckoned track starts at the first fix (if it coincides with scan 0) or the local origin
    x0, y0 = 0.0, 0.0
    if fixes and stamps and abs(fixes[0][0] - stamps[0]) < 1e-6 and fixes[0][1].fix_quality:
        x0, y0 = geodetic_to_local(fixes[0][1], ref.lat, ref.lon)
    origin = planar_transform(ds.initial_yaw, x0, y0)
    odometry = []
    for t, p in zip(stamps, poses):
        w = origin @ p
        odometry.append(LocalPose(t, float(w.translation[0]), float(w.translation[1]), yaw_of(w), PoseSource.LIDAR))

    trajectory = fuse_track(stamps, records, fixes, cfg, ref, odometry[0] if odometry else None)

    metrics = fused = None
    failures = sum(r.status != "ok" for r in records)
    frac = failures / len(records) if records else 0.0
    hz = len(records) / elapsed if records and elapsed > 0 else 0.0
    if ds.truth and odometry:
        metrics = compute_metrics(odometry, ds.truth, frac, hz)
        fused = compute_metrics(trajectory, ds.truth, frac, hz)
    return RunReport(trajectory, odometry, records, metrics, fused, _timing_stats(timings), list(ds.truth), method)


def fuse_track(stamps, records, fixes, cfg: PipelineConfig, ref, start: Optional[LocalPose]):
    """Merge odometry steps and fixes in time order through the switching filter."""
    if start is None:
        return []
    events = {}
    for k, t in enumerate(stamps):
        events.setdefault(round(t, 6), [None, None])
        if k > 0:
            r = records[k - 1]
            events[round(t, 6)][1] = PlanarMotion(r.yaw, r.dx, r.dy)
    for t, fix in fixes:
        events.setdefault(round(t, 6), [None, None])[0] = fix
    state = FusedState.start(replace(start, t=min(events), source=PoseSource.GPS))
    out = []
    for t in sorted(events):
        fix, odom = events[t]
        if fix is None and odom is None:
            # the first scan carries no motion; emit the starting pose
            out.append(state.pose)
            continue
        state = fuse_step(state, fix, odom, cfg.fusion, ref, t=t)
        out.append(state.pose)
    return out


# --- benchmark ---------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkRow:
    pair: int
    points: int
    bucket: str
    method: str
    stage: str
    min_s: float
    mean_s: float
    repetitions: int


@dataclass
class BenchmarkReport:
    rows: list
    end_to_end_hz: float
    spearman_rho: float
    per_pair_seconds: list  # (points, mean seconds per pair)


def _bucket(points: int, width: int = 3000) -> str:
    lo = (points // width) * width
    return f"{lo}-{lo + width}"


def benchmark(dataset, method: str = "planar", config: PipelineConfig = None, repetitions: int = 3,
              seed: int = 0, max_pairs: Optional[int] = None) -> BenchmarkReport:
    """Wall-clock per stage for every consecutive pair, repeated ``repetitions`` times.

    Pairs are reported with the mean raw point count of the two scans and
    grouped into 3,000-point buckets; the Spearman correlation between
    point count and per-pair time summarises the scaling.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    cfg = PipelineConfig() if config is None else config
    ds = _load(dataset)
    n_pairs = len(ds.scans) - 1 if max_pairs is None else min(max_pairs, len(ds.scans) - 1)
    rows = []
    per_pair = []
    total = 0.0
    for i in range(n_pairs):
        a, b = ds.scans[i][1], ds.scans[i + 1][1]
        points = (len(a) + len(b)) // 2
        samples = {}
        for _ in range(repetitions):
            stage_t = {}
            t0 = time.perf_counter()
            try:
                if method == "planar":
                    if not anomaly_gate(len(a), len(b), cfg.preprocess.anomaly_ratio):
                        raise AnomalousScan(len(a), len(b))
                    ia = project_to_image(crop_range(a, cfg.preprocess), cfg.planar.canvas)
                    ib = project_to_image(crop_range(b, cfg.preprocess), cfg.planar.canvas)
                    t1 = time.perf_counter()
                    stage_t["project"] = t1 - t0
                    rotation_search(ia, ib, cfg.planar.yaw_range, cfg.planar.yaw_step, cfg.planar.canvas.resolution,
                                    cfg.planar.window, cfg.planar.subpixel, cfg.planar.window_taper,
                                    cfg.planar.bandwidth)
                    stage_t["rotate_correlate"] = time.perf_counter() - t1
                else:
                    res = register_scans(a, b, cfg.preprocess, replace(cfg.registration, seed=seed + i), cfg.features)
                    stage_t.update({k: v for k, v in res.timings.items() if k != "total"})
            except LidarOdomError:
                pass
            stage_t["end_to_end"] = time.perf_counter() - t0
            for k, v in stage_t.items():
                samples.setdefault(k, []).append(v)
        for stage, v in samples.items():
            rows.append(BenchmarkRow(i + 1, points, _bucket(points), method, stage, float(np.min(v)),
                                     float(np.mean(v)), len(v)))
        mean_pair = float(np.mean(samples["end_to_end"]))
        per_pair.append((points, mean_pair))
        total += mean_pair
    hz = n_pairs / total if total > 0 else 0.0
    rho = float("nan")
    if len(per_pair) > 2:
        pts, secs = zip(*per_pair)
        if len(set(pts)) > 1:
            rho = float(stats.spearmanr(pts, secs).statistic)
    return BenchmarkReport(rows, hz, rho, per_pair)


# --- outputs -----------------------------------------------------------------

def write_per_pair_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "t", "status", "reason", "yaw", "dx", "dy", "quality", "points_a", "points_b"])
        for r in records:
            w.writerow([r.index, f"{r.t:.6f}", r.status, r.reason, f"{r.yaw:.9f}", f"{r.dx:.6f}", f"{r.dy:.6f}",
                        f"{r.quality:.6f}", r.points_a, r.points_b])


_DETERMINISTIC_METRICS = [f.name for f in fields(Metrics) if f.name != "throughput_hz"]


def write_metrics_csv(path, report: RunReport) -> None:
    """Metrics of the odometry and fused tracks; wall-clock values are excluded."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["track", "metric", "value"])
        for track, m in (("odometry", report.metrics), ("fused", report.fused_metrics)):
            if m is None:
                continue
            values = asdict(m)
            for name in _DETERMINISTIC_METRICS:
                w.writerow([track, name, f"{values[name]:.6f}"])


def write_timing_csv(path, report: RunReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "mean_s", "p50_s", "p95_s"])
        for stage, (mean, p50, p95) in sorted(report.timing.items()):
            w.writerow([stage, f"{mean:.6f}", f"{p50:.6f}", f"{p95:.6f}"])
        if report.metrics is not None:
            w.writerow(["throughput_hz", f"{report.metrics.throughput_hz:.6f}", "", ""])


def write_benchmark_csv(path, report: BenchmarkReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair", "points", "bucket", "method", "stage", "min_s", "mean_s", "repetitions"])
        for r in report.rows:
            w.writerow([r.pair, r.points, r.bucket, r.method, r.stage, f"{r.min_s:.6f}", f"{r.mean_s:.6f}",
                        r.repetitions])


def write_run_outputs(out_dir, report: RunReport, timing: bool = False) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "trajectory.csv", out / "per_pair.csv", out / "metrics.csv"]
    write_trajectory_csv(written[0], report.trajectory)
    write_per_pair_csv(written[1], report.per_pair)
    write_metrics_csv(written[2], report)
    if timing:
        written.append(out / "timing.csv")
        write_timing_csv(written[-1], report)
    return written

