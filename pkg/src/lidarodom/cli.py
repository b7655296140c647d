"""``lidarodom`` command line: simulate, register, run, eval, bench.

Exit codes: 0 success, 2 usage error, 3 data error, 4 internal failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from .config import load_config
from .exceptions import DatasetNotFound, FormatError, LidarOdomError, NmeaError
from .geometry import read_cloud
from .navfusion import read_trajectory_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _floats(text: str, n: int, name: str) -> tuple:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"{name}: expected comma-separated numbers, got {text!r}") from None
    if len(values) not in (n if isinstance(n, tuple) else (n,)):
        raise UsageError(f"{name}: expected {n} values, got {len(values)}")
    return values


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lidarodom", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic dataset")
    s.add_argument("--scene", default="canal_walls", help="bundled scene name")
    s.add_argument("--scene-file", help="scene description file (overrides --scene)")
    s.add_argument("--start", default="0,0,0", help="x,y,heading_deg of the first pose")
    s.add_argument("--speed", type=float, default=2.0)
    s.add_argument("--yaw-rate", type=float, default=0.0, help="deg/s")
    s.add_argument("--duration", type=float, default=10.0, help="seconds")
    s.add_argument("--blackout", action="append", default=[], metavar="T0,T1")
    s.add_argument("--multipath", action="append", default=[], metavar="T0,T1,AMP[,PERIOD]")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    r = sub.add_parser("register", help="register one scan pair and print the motion")
    r.add_argument("--method", choices=("full6d", "planar"), default="planar")
    r.add_argument("--scan-a", help="cloud file of the first scan")
    r.add_argument("--scan-b", help="cloud file of the second scan")
    r.add_argument("--dataset", help="take the pair from a dataset instead")
    r.add_argument("--pair", type=int, default=1, help="index of the second scan within --dataset")
    r.add_argument("--config")
    r.add_argument("--seed", type=int, default=0)

    u = sub.add_parser("run", help="odometry + GPS fusion over a dataset")
    u.add_argument("--dataset", required=True)
    u.add_argument("--method", choices=("full6d", "planar"), default="planar")
    u.add_argument("--config")
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--out", required=True)
    u.add_argument("--timing", action="store_true", help="also write timing.csv (wall-clock, not reproducible)")
    u.add_argument("--projections", action="store_true", help="write projections/NNNNNN.pgm")

    e = sub.add_parser("eval", help="metrics of a trajectory CSV against truth")
    e.add_argument("--estimated", required=True)
    e.add_argument("--truth", help="truth CSV (t,x,y,yaw)")
    e.add_argument("--dataset", help="use the dataset's truth.csv")
    e.add_argument("--out")

    b = sub.add_parser("bench", help="per-stage timing over a dataset")
    b.add_argument("--dataset", required=True)
    b.add_argument("--method", choices=("full6d", "planar", "both"), default="both")
    b.add_argument("--config")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--repetitions", type=int, default=3)
    b.add_argument("--max-pairs", type=int)
    b.add_argument("--out", required=True)
    return p


def _cmd_simulate(args) -> int:
    from . import sim

    scene = sim.read_scene(args.scene_file) if args.scene_file else None
    if scene is None:
        try:
            scene = sim.bundled_scene(args.scene)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    x0, y0, heading = _floats(args.start, 3, "--start")
    blackouts = tuple(_floats(w, 2, "--blackout") for w in args.blackout)
    multipath = []
    for w in args.multipath:
        v = _floats(w, (3, 4, 5), "--multipath")
        multipath.append(v if len(v) > 3 else v + (20.0,))
    try:
        gps = sim.GpsCorruptionModel(blackout_windows=blackouts, multipath_windows=tuple(multipath))
        traj = sim.straight_trajectory(x0, y0, math.radians(heading), args.speed, args.duration,
                                       math.radians(args.yaw_rate))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = sim.simulate_run(scene, traj, gps=gps, seed=args.seed)
    sim.write_dataset(args.out, ds)
    print(f"wrote {len(ds.scans)} scans to {args.out}")
    return EXIT_OK


def _cmd_register(args) -> int:
    from .planar import match_planar
    from .registration import register_scans
    from .sim import read_dataset

    cfg = load_config(args.config)
    if args.dataset:
        ds = read_dataset(args.dataset)
        if not 1 <= args.pair < len(ds.scans):
            raise UsageError(f"--pair must lie in [1, {len(ds.scans) - 1}]")
        a, b = ds.scans[args.pair - 1][1], ds.scans[args.pair][1]
    elif args.scan_a and args.scan_b:
        a, b = read_cloud(args.scan_a), read_cloud(args.scan_b)
    else:
        raise UsageError("give --dataset or both --scan-a and --scan-b")
    if args.method == "planar":
        m = match_planar(a, b, cfg.planar, cfg.preprocess)
        print(f"PlanarMotion yaw_deg={math.degrees(m.yaw):.6f} dx={m.dx:.6f} dy={m.dy:.6f} score={m.score:.6f}")
    else:
        from dataclasses import replace

        res = register_scans(a, b, cfg.preprocess, replace(cfg.registration, seed=args.seed), cfg.features)
        t = res.transform
        print(f"PosedTransform stage={res.stage_reached} fitness={res.motion.fitness:.6f} "
              f"inliers={res.motion.inlier_count} rejected_fraction={res.rejected_fraction:.4f}")
        for row in t.matrix:
            print(" ".join(f"{v: .9f}" for v in row))
    return EXIT_OK


def _cmd_run(args) -> int:
    from .evaluation import run_pipeline, write_run_outputs
    from .planar import project_to_image, write_pgm
    from .plots import write_run_plots
    from .preprocess import crop_range
    from .sim import read_dataset

    cfg = load_config(args.config)
    ds = read_dataset(args.dataset)
    report = run_pipeline(ds, args.method, cfg, args.seed)
    write_run_outputs(args.out, report, timing=args.timing)
    write_run_plots(args.out, {"fused": report.trajectory, "odometry": report.odometry}, report.truth)
    if args.projections:
        pdir = Path(args.out) / "projections"
        pdir.mkdir(parents=True, exist_ok=True)
        for i, (_, cloud) in enumerate(ds.scans):
            write_pgm(pdir / f"{i:06d}.pgm", project_to_image(crop_range(cloud, cfg.preprocess), cfg.planar.canvas))
    _print_metrics(report.metrics, "odometry")
    _print_metrics(report.fused_metrics, "fused")
    return EXIT_OK


def _print_metrics(m, label):
    if m is None:
        return
    from dataclasses import asdict

    print(label + ": " + " ".join(f"{k}={v:.6g}" for k, v in asdict(m).items()))


def _cmd_eval(args) -> int:
    import csv

    from .evaluation import compute_metrics

    if args.truth:
        truth_path = args.truth
    elif args.dataset:
        truth_path = Path(args.dataset) / "truth.csv"
        if not Path(args.dataset).is_dir():
            raise DatasetNotFound(f"no dataset at {args.dataset}")
    else:
        raise UsageError("give --truth or --dataset")
    est = read_trajectory_csv(args.estimated)
    truth = read_trajectory_csv(truth_path)
    m = compute_metrics(est, truth)
    _print_metrics(m, "metrics")
    if args.out:
        from dataclasses import asdict

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            for k, v in asdict(m).items():
                if k != "throughput_hz":
                    w.writerow([k, f"{v:.6f}"])
    return EXIT_OK


def _cmd_bench(args) -> int:
    from .evaluation import benchmark, write_benchmark_csv
    from .sim import read_dataset

    if args.repetitions < 1:
        raise UsageError("--repetitions must be >= 1")
    cfg = load_config(args.config)
    ds = read_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    methods = ("planar", "full6d") if args.method == "both" else (args.method,)
    for method in methods:
        rep = benchmark(ds, method, cfg, args.repetitions, args.seed, args.max_pairs)
        write_benchmark_csv(out / f"benchmark_{method}.csv", rep)
        print(f"{method}: {rep.end_to_end_hz:.3f} Hz end to end, spearman(points, time) = {rep.spearman_rho:.3f}")
    return EXIT_OK


COMMANDS = {"simulate": _cmd_simulate, "register": _cmd_register, "run": _cmd_run, "eval": _cmd_eval,
            "bench": _cmd_bench}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, DatasetNotFound, NmeaError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LidarOdomError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal-failure exit code
        print(f"internal failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
