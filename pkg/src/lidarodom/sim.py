"""Synthetic canal scenes, a spinning multi-beam LiDAR, and a corrupted GPS.

Scenes are lists of yawed boxes standing on (or, for walls, through) the
water plane ``z = 0``. Rays that reach the water first return nothing, so
open water yields empty scans, as a real surface-vehicle LiDAR does.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import DatasetNotFound, EmptyTrajectory, FormatError
from .geometry import PointCloud, read_cloud, write_cloud
from .navfusion import GpsFix, LocalPose, PoseSource, Reference, format_gga, local_to_geodetic, wrap_angle

KINDS = ("WALL", "PILLAR", "DECK", "GIRDER")


@dataclass(frozen=True)
class Primitive:
    """Box with centre ``(x, y, z)``, heading ``yaw`` and full extents."""

    kind: str
    x: float
    y: float
    z: float
    yaw: float
    length: float
    width: float
    height: float
    reflectivity: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if min(self.length, self.width, self.height) <= 0:
            raise ValueError("primitive dimensions must be positive")
        if not 0.0 <= self.reflectivity <= 1.0:
            raise ValueError("reflectivity must lie in [0, 1]")
        if self.kind != "WALL" and self.z - self.height / 2 < -1e-9:
            raise ValueError(f"{self.kind} must stay above the water plane")

    @property
    def half_extents(self):
        return np.array([self.length, self.width, self.height]) / 2.0

    def horizontal_distance(self, x: float, y: float) -> float:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx, dy = x - self.x, y - self.y
        lx, ly = c * dx + s * dy, -s * dx + c * dy
        ex = max(abs(lx) - self.length / 2, 0.0)
        ey = max(abs(ly) - self.width / 2, 0.0)
        return math.hypot(ex, ey)


@dataclass(frozen=True)
class Scene:
    primitives: tuple = ()
    name: str = "custom"

    def distance_to_structure(self, x: float, y: float) -> float:
        if not self.primitives:
            return math.inf
        return min(p.horizontal_distance(x, y) for p in self.primitives)


def write_scene(path, scene: Scene) -> None:
    lines = [f"# scene {scene.name}", "# KIND x y z yaw length width height reflectivity"]
    for p in scene.primitives:
        lines.append(
            f"{p.kind} {p.x:.6f} {p.y:.6f} {p.z:.6f} {p.yaw:.9f} {p.length:.6f} {p.width:.6f} "
            f"{p.height:.6f} {p.reflectivity:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_scene(path) -> Scene:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FormatError(path, 0, f"cannot read: {exc}") from exc
    prims = []
    name = path.stem
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if text.startswith("# scene "):
            name = text[len("# scene "):].strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        if len(parts) != 9 or parts[0] not in KINDS:
            raise FormatError(path, lineno, "expected 'WALL|PILLAR|DECK|GIRDER x y z yaw length width height reflectivity'")
        try:
            prims.append(Primitive(parts[0], *map(float, parts[1:])))
        except ValueError as exc:
            raise FormatError(path, lineno, str(exc)) from None
    return Scene(tuple(prims), name)


# --- bundled scenes ----------------------------------------------------------

CANAL_HALF_WIDTH = 12.0
CANAL_START, CANAL_END = -60.0, 360.0


def _canal(half_width=CANAL_HALF_WIDTH, top=2.6, x0=CANAL_START, x1=CANAL_END, buttress_every=9.0):
    """Two quay walls along x with irregularly spaced buttresses on their faces."""
    length = x1 - x0
    mid = (x0 + x1) / 2
    bottom = -1.5
    h = top - bottom
    prims = [
        Primitive("WALL", mid, half_width + 0.5, (top + bottom) / 2, 0.0, length, 1.0, h, 0.55),
        Primitive("WALL", mid, -half_width - 0.5, (top + bottom) / 2, 0.0, length, 1.0, h, 0.55),
    ]
    # deterministic, non-periodic spacing so along-canal position stays observable
    rng = np.random.default_rng(1234)
    for side in (1.0, -1.0):
        x = x0 + 3.0
        while x < x1 - 3.0:
            depth = float(rng.uniform(0.4, 1.0))
            prims.append(
                Primitive("PILLAR", x, side * (half_width - depth / 2), (top + 0.4) / 2, 0.0,
                          float(rng.uniform(0.5, 1.4)), depth, top + 0.4, 0.7)
            )
            x += buttress_every * float(rng.uniform(0.6, 1.4))
    return prims


def open_water_scene() -> Scene:
    return Scene((), "open_water")


def canal_walls_scene() -> Scene:
    return Scene(tuple(_canal()), "canal_walls")


def bridge_crossing_scene() -> Scene:
    """Canal crossed by a wide road bridge between x = 100 and x = 150.

    Two rows of pillars support the deck; girders run across the canal
    under it.
    """
    prims = _canal()
    x0, x1 = 100.0, 150.0
    deck_bottom, deck_top = 5.0, 6.0
    prims.append(Primitive("DECK", (x0 + x1) / 2, 0.0, (deck_bottom + deck_top) / 2, 0.0,
                           x1 - x0, 2 * CANAL_HALF_WIDTH + 4.0, deck_top - deck_bottom, 0.4))
    for row_x in (x0 + 4.0, x1 - 4.0):
        for y in (-6.5, 6.5):
            prims.append(Primitive("PILLAR", row_x, y, deck_bottom / 2, 0.0, 1.6, 1.6, deck_bottom, 0.8))
    gx = x0 + 1.5
    while gx < x1:
        prims.append(Primitive("GIRDER", gx, 0.0, deck_bottom - 0.3, 0.0, 0.3, 2 * CANAL_HALF_WIDTH, 0.6, 0.3))
        gx += 6.0
    return Scene(tuple(prims), "bridge_crossing")


def lock_scene() -> Scene:
    """Canal narrowing into a lock chamber between x = 100 and x = 160, with gates."""
    prims = [p for p in _canal() if not (90.0 < p.x < 170.0 and p.kind == "PILLAR")]
    others = [p for p in prims if p.kind != "WALL"]
    hw = CANAL_HALF_WIDTH
    chamber_hw = 7.0
    bottom, top = -1.5, 3.0
    pieces = []
    for side in (1.0, -1.0):
        # quay walls before and after the lock
        for a, b in ((CANAL_START, 100.0), (160.0, CANAL_END)):
            pieces.append(Primitive("WALL", (a + b) / 2, side * (hw + 0.5), (2.6 + bottom) / 2, 0.0,
                                    b - a, 1.0, 2.6 - bottom, 0.55))
        # chamber walls and the wing walls closing the wide canal onto the chamber
        pieces.append(Primitive("WALL", 130.0, side * (chamber_hw + 0.5), (top + bottom) / 2, 0.0,
                                60.0, 1.0, top - bottom, 0.6))
        for wx in (100.0, 160.0):
            pieces.append(Primitive("WALL", wx, side * (chamber_hw + hw + 1.0) / 2, (top + bottom) / 2, 0.0,
                                    1.0, hw - chamber_hw + 1.0, top - bottom, 0.6))
        # recesses for the gates
        for gx in (103.0, 157.0):
            pieces.append(Primitive("PILLAR", gx, side * (chamber_hw - 0.4), (top + 0.5) / 2, 0.0,
                                    1.2, 0.8, top + 0.5, 0.75))
    # open gate leaves folded against the chamber walls, and bollards
    for side in (1.0, -1.0):
        for gx in (106.0, 154.0):
            pieces.append(Primitive("PILLAR", gx, side * (chamber_hw - 0.25), 1.5, 0.0, 4.0, 0.5, 3.0, 0.35))
        for bx in (114.0, 121.0, 133.0, 146.0):
            pieces.append(Primitive("PILLAR", bx, side * (chamber_hw - 0.3), 1.8, 0.0, 0.6, 0.6, 3.6, 0.9))
    return Scene(tuple(pieces + others), "lock")


SCENES = {
    "open_water": open_water_scene,
    "canal_walls": canal_walls_scene,
    "bridge_crossing": bridge_crossing_scene,
    "lock": lock_scene,
}


def bundled_scene(name: str) -> Scene:
    try:
        return SCENES[name]()
    except KeyError:
        raise ValueError(f"unknown scene {name!r}; choose from {sorted(SCENES)}") from None


# --- LiDAR -------------------------------------------------------------------

@dataclass(frozen=True)
class LidarModel:
    beam_elevations: tuple = tuple(np.radians(np.linspace(10.67, -30.67, 32)).tolist())
    azimuth_step: float = math.radians(0.2)
    max_range: float = 80.0
    range_noise_sigma: float = 0.02
    dropout_prob: float = 0.02
    mount_height: float = 2.0

    def __post_init__(self):
        n = 2 * math.pi / self.azimuth_step
        if abs(n - round(n)) > 1e-6:
            raise ValueError("azimuth_step must divide 2*pi")
        if not 0 <= self.dropout_prob < 1:
            raise ValueError("dropout_prob must lie in [0, 1)")
        if self.max_range <= 0 or self.range_noise_sigma < 0:
            raise ValueError("bad range parameters")

    @property
    def n_azimuths(self) -> int:
        return int(round(2 * math.pi / self.azimuth_step))

    def directions(self) -> np.ndarray:
        """Unit beam directions in the sensor frame, (n_beams * n_azimuths, 3)."""
        el = np.asarray(self.beam_elevations)[:, None]
        az = (np.arange(self.n_azimuths) * self.azimuth_step)[None, :]
        z = np.broadcast_to(np.sin(el), (el.shape[0], az.shape[1]))
        d = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), z], axis=-1)
        return d.reshape(-1, 3)


def _box_hits(origin, dirs, prim: Primitive) -> np.ndarray:
    """Ray parameter of the first entry into ``prim`` (inf for misses)."""
    c, s = math.cos(prim.yaw), math.sin(prim.yaw)
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])  # world -> box
    o = rot @ (origin - np.array([prim.x, prim.y, prim.z]))
    d = dirs @ rot.T
    h = prim.half_extents
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-h - o) * inv
        t2 = (h - o) * inv
    tmin = np.nanmax(np.minimum(t1, t2), axis=1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = (tmax >= tmin) & (tmin > 0)
    return np.where(hit, tmin, np.inf)


def _azimuth_columns(prim: Primitive, pose: LocalPose, model: LidarModel):
    """Sensor-frame azimuth columns whose rays can reach ``prim``'s footprint, or None for all."""
    if prim.horizontal_distance(pose.x, pose.y) <= 1e-9:
        return None
    c, s = math.cos(prim.yaw), math.sin(prim.yaw)
    hl, hw = prim.length / 2, prim.width / 2
    corners = [(prim.x + c * a - s * b, prim.y + s * a + c * b) for a in (-hl, hl) for b in (-hw, hw)]
    to_centre = math.atan2(prim.y - pose.y, prim.x - pose.x)
    rel = [wrap_angle(math.atan2(cy - pose.y, cx - pose.x) - to_centre) for cx, cy in corners]
    margin = model.azimuth_step
    lo = to_centre - pose.yaw + min(rel) - margin
    hi = to_centre - pose.yaw + max(rel) + margin
    n = model.n_azimuths
    first = math.floor(lo / model.azimuth_step)
    last = math.ceil(hi / model.azimuth_step)
    if last - first + 1 >= n:
        return None
    return np.arange(first, last + 1) % n


def raycast_scan(scene: Scene, pose: LocalPose, model: LidarModel = LidarModel(), rng_seed=0,
                 stamp: Optional[float] = None) -> PointCloud:
    """One sweep from ``pose`` (sensor at ``mount_height`` above the water).

    Points are returned in the sensor frame (x forward, z up). Every beam
    keeps only its nearest intersection; beams that meet the water first,
    exceed ``max_range`` or drop out return nothing.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    n_el, n_az = len(model.beam_elevations), model.n_azimuths
    dirs_s = model.directions()
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    dirs = (dirs_s @ rot.T).reshape(n_el, n_az, 3)
    origin = np.array([pose.x, pose.y, model.mount_height])
    t = np.full((n_el, n_az), np.inf)
    refl = np.zeros((n_el, n_az))
    for prim in scene.primitives:
        if prim.horizontal_distance(pose.x, pose.y) > model.max_range:
            continue
        cols = _azimuth_columns(prim, pose, model)
        if cols is None:
            cols = np.arange(n_az)
        th = _box_hits(origin, dirs[:, cols].reshape(-1, 3), prim).reshape(n_el, len(cols))
        sub_t = t[:, cols]
        closer = th < sub_t
        t[:, cols] = np.where(closer, th, sub_t)
        refl[:, cols] = np.where(closer, prim.reflectivity, refl[:, cols])
    t, refl, dirs = t.ravel(), refl.ravel(), dirs.reshape(-1, 3)
    with np.errstate(divide="ignore"):
        t_water = np.where(dirs[:, 2] < 0, -origin[2] / dirs[:, 2], np.inf)
    noise = rng.normal(0.0, model.range_noise_sigma, len(dirs)) if model.range_noise_sigma > 0 else 0.0
    dropped = rng.random(len(dirs)) < model.dropout_prob
    keep = np.isfinite(t) & (t < t_water) & (t <= model.max_range) & ~dropped
    r = (t + noise)[keep]
    pts = dirs_s[keep] * r[:, None]
    return PointCloud(pts, refl[keep], pose.t if stamp is None else stamp, "lidar")


# --- trajectories ------------------------------------------------------------

def straight_trajectory(x0=0.0, y0=0.0, heading=0.0, speed=2.0, duration=10.0, yaw_rate=0.0, t0=0.0,
                        dt=0.1) -> list[LocalPose]:
    """Constant speed and turn rate, sampled every ``dt`` seconds."""
    poses = []
    x, y, yaw = x0, y0, heading
    n = int(round(duration / dt))
    for i in range(n + 1):
        poses.append(LocalPose(t0 + i * dt, x, y, wrap_angle(yaw), PoseSource.GPS))
        # exact arc integration keeps long runs drift-free
        if abs(yaw_rate) > 1e-12:
            r = speed / yaw_rate
            x += r * (math.sin(yaw + yaw_rate * dt) - math.sin(yaw))
            y -= r * (math.cos(yaw + yaw_rate * dt) - math.cos(yaw))
        else:
            x += speed * dt * math.cos(yaw)
            y += speed * dt * math.sin(yaw)
        yaw += yaw_rate * dt
    return poses


def interpolate_pose(trajectory: Sequence[LocalPose], t: float) -> LocalPose:
    ts = [p.t for p in trajectory]
    if t <= ts[0]:
        return trajectory[0]
    if t >= ts[-1]:
        return trajectory[-1]
    i = int(np.searchsorted(ts, t, side="right")) - 1
    a, b = trajectory[i], trajectory[i + 1]
    f = (t - a.t) / (b.t - a.t)
    yaw = a.yaw + f * wrap_angle(b.yaw - a.yaw)
    return LocalPose(t, a.x + f * (b.x - a.x), a.y + f * (b.y - a.y), wrap_angle(yaw), PoseSource.GPS)


# --- GPS ---------------------------------------------------------------------

@dataclass(frozen=True)
class GpsCorruptionModel:
    blackout_windows: tuple = ()
    multipath_windows: tuple = ()  # (t_start, t_end, amplitude_m, period_s[, direction_rad])
    base_noise_sigma: float = 0.3
    base_hdop: float = 0.9
    reference: Reference = Reference()
    time_of_day_start: float = 12 * 3600.0

    def __post_init__(self):
        for kind in (self.blackout_windows, self.multipath_windows):
            spans = sorted((w[0], w[1]) for w in kind)
            for (a0, a1), (b0, _) in zip(spans, spans[1:]):
                if b0 < a1:
                    raise ValueError("windows of one kind must not overlap")
            if any(a1 < a0 for a0, a1 in spans):
                raise ValueError("window end before start")
        if any(w[2] < 0 for w in self.multipath_windows):
            raise ValueError("multipath amplitude must be non-negative")

    def in_blackout(self, t: float) -> bool:
        return any(a <= t < b for a, b in self.blackout_windows)

    def multipath_bias(self, t: float) -> tuple[float, float]:
        for w in self.multipath_windows:
            a, b, amp, period = w[:4]
            if a <= t < b:
                direction = w[4] if len(w) > 4 else math.pi / 2
                m = amp * math.sin(2 * math.pi * (t - a) / period)
                return m * math.cos(direction), m * math.sin(direction)
        return 0.0, 0.0


def corrupt_gps(true_pose: LocalPose, t: float, model: GpsCorruptionModel, rng) -> Optional[str]:
    """GGA sentence for the true position at ``t``, or None inside a blackout."""
    noise = rng.normal(0.0, model.base_noise_sigma, 2) if model.base_noise_sigma > 0 else np.zeros(2)
    if model.in_blackout(t):
        return None
    bx, by = model.multipath_bias(t)
    x = true_pose.x + bx + float(noise[0])
    y = true_pose.y + by + float(noise[1])
    lat, lon = local_to_geodetic(x, y, model.reference.lat, model.reference.lon)
    fix = GpsFix(model.time_of_day_start + t, lat, lon, 1, 9, model.base_hdop, 5.0)
    return format_gga(fix)


# --- datasets ----------------------------------------------------------------

@dataclass
class SimDataset:
    scans: list  # [(stamp, PointCloud)]
    gps_log: list  # [(stamp, sentence or None)]
    truth: list  # [LocalPose] at every scan stamp
    seed: int = 0
    reference: Reference = field(default_factory=Reference)
    initial_yaw: float = 0.0

    @property
    def stamps(self):
        return [s for s, _ in self.scans]


def _scan_rng(seed: int, index: int):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def _simulate_scans(scene, trajectory, lidar, seed, scan_period):
    t0, t1 = trajectory[0].t, trajectory[-1].t
    n_scans = max(1, int(math.floor((t1 - t0) / scan_period + 1e-9)))
    scans, truth = [], []
    for i in range(n_scans):
        t = round(t0 + i * scan_period, 9)
        pose = interpolate_pose(trajectory, t)
        truth.append(pose)
        scans.append((t, raycast_scan(scene, pose, lidar, _scan_rng(seed, i), stamp=t)))
    return scans, truth


def simulate_run(scene: Scene, trajectory: Sequence[LocalPose], lidar: LidarModel = LidarModel(),
                 gps: GpsCorruptionModel = GpsCorruptionModel(), seed: int = 0, scan_period: float = 0.1,
                 gps_period: float = 1.0) -> SimDataset:
    """Scans every ``scan_period`` and GGA fixes every ``gps_period`` along a trajectory.

    Sampling covers ``[t_start, t_end)``. Each scan and each fix draws from
    its own RNG stream derived from ``seed``, so output does not depend on
    generation order.
    """
    if not trajectory:
        raise EmptyTrajectory("trajectory has no poses")
    ts = [p.t for p in trajectory]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError("trajectory must be time-ordered")
    t0, t1 = ts[0], ts[-1]
    scans, truth = _simulate_scans(scene, trajectory, lidar, seed, scan_period)
    gps_log = []
    n_fix = max(1, int(math.floor((t1 - t0) / gps_period + 1e-9)))
    for k in range(n_fix):
        t = round(t0 + k * gps_period, 9)
        sentence = corrupt_gps(interpolate_pose(trajectory, t), t, gps, _scan_rng(seed, 1_000_000 + k))
        gps_log.append((t, sentence))
    return SimDataset(scans, gps_log, truth, seed, gps.reference, trajectory[0].yaw)


def write_dataset(path, ds: SimDataset) -> None:
    """Directory with manifest.csv, scans/, gps.log, truth.csv, seed.txt, reference.txt."""
    root = Path(path)
    (root / "scans").mkdir(parents=True, exist_ok=True)
    with open(root / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "scan_file"])
        for i, (t, cloud) in enumerate(ds.scans):
            name = f"scans/{i:06d}.cloud"
            write_cloud(root / name, cloud)
            w.writerow([f"{t:.6f}", name])
    with open(root / "gps.log", "w") as fh:
        for t, sentence in ds.gps_log:
            if sentence is not None:
                fh.write(f"{t:.3f} {sentence}\n")
    with open(root / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "yaw"])
        for p in ds.truth:
            w.writerow([f"{p.t:.6f}", f"{p.x:.6f}", f"{p.y:.6f}", f"{p.yaw:.6f}"])
    (root / "seed.txt").write_text(f"{ds.seed}\n")
    (root / "reference.txt").write_text(
        f"ref_lat = {ds.reference.lat:.9f}\nref_lon = {ds.reference.lon:.9f}\ninitial_yaw = {ds.initial_yaw:.9f}\n"
    )


def _read_csv_rows(path, header):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise FormatError(path, 0, f"cannot read: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first != header:
            raise FormatError(path, 1, f"expected header {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if row:
                yield lineno, row


def read_dataset(path) -> SimDataset:
    from .navfusion import read_gps_log

    root = Path(path)
    if not (root / "manifest.csv").is_file():
        raise DatasetNotFound(f"no manifest.csv under {root}")
    scans = []
    for lineno, row in _read_csv_rows(root / "manifest.csv", ["t", "scan_file"]):
        if len(row) != 2:
            raise FormatError(root / "manifest.csv", lineno, "expected t,scan_file")
        try:
            t = float(row[0])
        except ValueError:
            raise FormatError(root / "manifest.csv", lineno, f"bad time {row[0]!r}") from None
        cloud = read_cloud(root / row[1])
        scans.append((t, cloud))
    stamps = [t for t, _ in scans]
    if any(b <= a for a, b in zip(stamps, stamps[1:])):
        raise FormatError(root / "manifest.csv", 2, "scan stamps must be strictly increasing")
    gps_log = read_gps_log(root / "gps.log") if (root / "gps.log").exists() else []
    truth = []
    if (root / "truth.csv").exists():
        for lineno, row in _read_csv_rows(root / "truth.csv", ["t", "x", "y", "yaw"]):
            try:
                truth.append(LocalPose(*map(float, row[:4]), PoseSource.GPS))
            except (TypeError, ValueError) as exc:
                raise FormatError(root / "truth.csv", lineno, str(exc)) from None
    seed = 0
    if (root / "seed.txt").exists():
        try:
            seed = int((root / "seed.txt").read_text().strip())
        except ValueError:
            raise FormatError(root / "seed.txt", 1, "seed must be an integer") from None
    ref, initial_yaw = Reference(), 0.0
    if (root / "reference.txt").exists():
        from .config import read_key_values

        kv = read_key_values(root / "reference.txt")
        try:
            ref = Reference(float(kv.get("ref_lat", ref.lat)), float(kv.get("ref_lon", ref.lon)))
            initial_yaw = float(kv.get("initial_yaw", 0.0))
        except ValueError as exc:
            raise FormatError(root / "reference.txt", 1, str(exc)) from None
    return SimDataset(scans, gps_log, truth, seed, ref, initial_yaw)


def density_sweep(scene: Scene, trajectory: Sequence[LocalPose], low: int = 6600, high: int = 27000,
                  lidar: LidarModel = LidarModel(azimuth_step=math.radians(0.1), dropout_prob=0.0),
                  seed: int = 0, scan_period: float = 0.1) -> SimDataset:
    """Scans thinned to point counts rising linearly from ``low`` to ``high``.

    Each scan is raycast densely and then a random subset of the target size
    is kept, which isolates the effect of point count on processing time.
    GPS is not simulated.

    Raises
    ------
    ValueError
        A dense scan holds fewer points than its target.
    """
    if not trajectory:
        raise EmptyTrajectory("trajectory has no poses")
    dense, truth = _simulate_scans(scene, trajectory, lidar, seed, scan_period)
    n = len(dense)
    targets = np.linspace(low, high, n).round().astype(int) if n > 1 else np.array([low])
    scans = []
    for i, ((t, cloud), target) in enumerate(zip(dense, targets)):
        if len(cloud) < target:
            raise ValueError(f"scan {i} has {len(cloud)} points, fewer than the target {target}")
        keep = np.sort(_scan_rng(seed, 2_000_000 + i).choice(len(cloud), size=int(target), replace=False))
        scans.append((t, cloud.subset(keep)))
    return SimDataset(scans, [], truth, seed, Reference(), trajectory[0].yaw)
