"""Point clouds, rigid transforms and the closed-form rigid alignment solver.

Clouds are stored column-wise (an ``(N, 3)`` coordinate array plus an
``(N,)`` intensity array) rather than as lists of point objects, so every
operation downstream can stay vectorised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .exceptions import DegenerateGeometry, FormatError

_ORTHO_TOL = 1e-9
_REORTHO_TOL = 1e-12


class Point3(NamedTuple):
    x: float
    y: float
    z: float
    intensity: float = 0.0

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """One LiDAR sweep.

    Parameters
    ----------
    xyz : ndarray, shape (N, 3)
        Coordinates in meters, sensor frame unless ``frame_id`` says otherwise.
    intensity : ndarray, shape (N,)
        Reflectance in [0, 1]. Defaults to zeros.
    stamp : float
        Capture time in seconds, non-negative.
    frame_id : str
    """

    xyz: np.ndarray
    intensity: np.ndarray = None
    stamp: float = 0.0
    frame_id: str = "lidar"

    def __post_init__(self):
        xyz = np.ascontiguousarray(self.xyz, dtype=float).reshape(-1, 3)
        if self.intensity is None:
            intensity = np.zeros(len(xyz))
        else:
            intensity = np.ascontiguousarray(self.intensity, dtype=float).reshape(-1)
        if len(intensity) != len(xyz):
            raise ValueError("intensity length does not match point count")
        if not np.isfinite(xyz).all():
            raise ValueError("point coordinates must be finite")
        if len(intensity) and (intensity.min() < 0.0 or intensity.max() > 1.0):
            raise ValueError("intensity must lie in [0, 1]")
        if not (self.stamp >= 0.0):
            raise ValueError("stamp must be non-negative")
        xyz.flags.writeable = False
        intensity.flags.writeable = False
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "intensity", intensity)
        object.__setattr__(self, "stamp", float(self.stamp))

    def __len__(self) -> int:
        return len(self.xyz)

    @classmethod
    def from_points(cls, points: Sequence[Point3], stamp: float = 0.0, frame_id: str = "lidar"):
        arr = np.array([tuple(p) for p in points], dtype=float).reshape(-1, 4)
        return cls(arr[:, :3], arr[:, 3], stamp, frame_id)

    @classmethod
    def from_array(cls, arr, stamp: float = 0.0, frame_id: str = "lidar"):
        """Build from an ``(N, 3)`` or ``(N, 4)`` array (x, y, z[, intensity])."""
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 2 or arr.shape[1] not in (3, 4):
            raise ValueError("expected an (N, 3) or (N, 4) array")
        intensity = arr[:, 3] if arr.shape[1] == 4 else None
        return cls(arr[:, :3], intensity, stamp, frame_id)

    def to_array(self) -> np.ndarray:
        return np.column_stack([self.xyz, self.intensity])

    def points(self) -> list[Point3]:
        return [Point3(*row) for row in self.to_array().tolist()]

    def subset(self, index) -> "PointCloud":
        """Cloud restricted to a boolean mask or an index array."""
        return PointCloud(self.xyz[index], self.intensity[index], self.stamp, self.frame_id)

    def with_xyz(self, xyz) -> "PointCloud":
        return PointCloud(xyz, self.intensity, self.stamp, self.frame_id)


def _rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense."""
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3): ``p -> rotation @ p + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise ValueError("transform entries must be finite")
        if np.abs(r.T @ r - np.eye(3)).max() > _ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must be orthonormal with det +1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        m = np.asarray(matrix, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, xyz) -> np.ndarray:
        """Map an ``(N, 3)`` array (or a single 3-vector)."""
        xyz = np.asarray(xyz, dtype=float)
        return xyz @ self.rotation.T + self.translation

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def rotation_angle(self) -> float:
        """Magnitude of the rotation in radians."""
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(math.acos(min(1.0, max(-1.0, c))))

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(
            np.linalg.norm(self.rotation - other.rotation) <= atol
            and np.linalg.norm(self.translation - other.translation) <= atol
        )

    def __repr__(self):
        yaw, pitch, roll = euler_zyx(self.rotation)
        t = ", ".join(f"{v:.4f}" for v in self.translation)
        return (
            f"RigidTransform(yaw={math.degrees(yaw):.4f}deg, pitch={math.degrees(pitch):.4f}deg, "
            f"roll={math.degrees(roll):.4f}deg, t=({t}))"
        )


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform that applies ``b`` first, then ``a``."""
    r = a.rotation @ b.rotation
    if np.abs(r.T @ r - np.eye(3)).max() > _REORTHO_TOL:
        r = orthonormalize(r)
    return RigidTransform(r, a.rotation @ b.translation + a.translation)


def apply_transform(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    return cloud.with_xyz(t.apply(cloud.xyz))


def transform_from_components(yaw: float, pitch: float, roll: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
    """Rotation ``Rz(yaw) @ Ry(pitch) @ Rx(roll)`` followed by a translation."""
    if not all(math.isfinite(a) for a in (yaw, pitch, roll)):
        raise ValueError("angles must be finite")
    return RigidTransform(_rot_z(yaw) @ _rot_y(pitch) @ _rot_x(roll), translation)


def planar_transform(yaw: float, dx: float, dy: float) -> RigidTransform:
    return transform_from_components(yaw, 0.0, 0.0, (dx, dy, 0.0))


def euler_zyx(rotation: np.ndarray) -> tuple[float, float, float]:
    """Decompose into (yaw, pitch, roll) for the Z-Y-X convention.

    At the gimbal singularity (pitch = +-pi/2) roll is fixed to 0 and the
    whole in-plane rotation is reported as yaw.
    """
    r = np.asarray(rotation, dtype=float)
    cos_pitch = math.hypot(r[0, 0], r[1, 0])
    pitch = math.atan2(-r[2, 0], cos_pitch)
    if cos_pitch < 1e-12:
        return math.atan2(-r[0, 1], r[1, 1]), pitch, 0.0
    return math.atan2(r[1, 0], r[0, 0]), pitch, math.atan2(r[2, 1], r[2, 2])


def yaw_of(t: RigidTransform) -> float:
    return math.atan2(t.rotation[1, 0], t.rotation[0, 0])


def project_planar(t: RigidTransform) -> RigidTransform:
    """Keep only yaw and the x-y translation of a transform."""
    return planar_transform(yaw_of(t), t.translation[0], t.translation[1])


@dataclass(frozen=True)
class PosedTransform:
    """Registration output with its Euler decomposition and fit quality."""

    transform: RigidTransform
    yaw: float
    pitch: float
    roll: float
    fitness: float = 0.0
    inlier_count: int = 0

    @classmethod
    def from_transform(cls, transform: RigidTransform, fitness: float = 0.0, inlier_count: int = 0):
        if fitness < 0:
            raise ValueError("fitness must be non-negative")
        yaw, pitch, roll = euler_zyx(transform.rotation)
        return cls(transform, yaw, pitch, roll, float(fitness), int(inlier_count))

    @property
    def translation(self) -> np.ndarray:
        return self.transform.translation


def estimate_rigid_transform(source, target=None) -> RigidTransform:
    """Least-squares rigid transform mapping ``source`` onto ``target``.

    Minimises ``sum ||R @ a_i + t - b_i||^2`` over given correspondences with
    the SVD of the cross-covariance matrix, correcting reflections so the
    result is a proper rotation.

    Parameters
    ----------
    source, target : array_like, shape (N, 3)
        Corresponding points. ``source`` may also be a sequence of
        ``(Point3, Point3)`` pairs, in which case ``target`` is omitted.

    Raises
    ------
    DegenerateGeometry
        Fewer than three pairs, or the source points are collinear or
        coincident.
    """
    if target is None:
        pairs = list(source)
        source = [p[0][:3] for p in pairs]
        target = [p[1][:3] for p in pairs]
    a = np.asarray(source, dtype=float).reshape(-1, 3)
    b = np.asarray(target, dtype=float).reshape(-1, 3)
    if len(a) != len(b):
        raise ValueError("source and target must have the same length")
    if len(a) < 3:
        raise DegenerateGeometry(f"need at least 3 correspondences, got {len(a)}")
    ca = a.mean(axis=0)
    cb = b.mean(axis=0)
    a0 = a - ca
    b0 = b - cb
    sv = np.linalg.svd(a0, compute_uv=False)
    scale = max(sv[0], 1.0)
    if sv[1] <= 1e-10 * scale:
        raise DegenerateGeometry("source points are collinear or coincident")
    h = a0.T @ b0
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(r, cb - r @ ca)


def rigid_residual(t: RigidTransform, source, target) -> float:
    """Sum of squared correspondence residuals under ``t``."""
    diff = t.apply(np.asarray(source, dtype=float)) - np.asarray(target, dtype=float)
    return float(np.einsum("ij,ij->", diff, diff))


# --- cloud file format -------------------------------------------------------

def write_cloud(path, cloud: PointCloud) -> None:
    """Write the ASCII ``CLOUD v1`` format (9 significant digits)."""
    arr = cloud.to_array()
    header = f"CLOUD v1 {len(arr)} {cloud.stamp:.9f}\n"
    body = ("%.9g %.9g %.9g %.9g\n" * len(arr)) % tuple(arr.ravel().tolist())
    Path(path).write_text(header + body)


def read_cloud(path, frame_id: str = "lidar") -> PointCloud:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(path, 0, f"cannot read: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise FormatError(path, 1, "empty file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "CLOUD" or head[1] != "v1":
        raise FormatError(path, 1, "expected 'CLOUD v1 <count> <stamp>'")
    try:
        count = int(head[2])
        stamp = float(head[3])
    except ValueError:
        raise FormatError(path, 1, "bad count or stamp") from None
    body = lines[1:]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != count:
        raise FormatError(path, 1, f"header declares {count} points, file has {len(body)}")
    tokens = "\n".join(body).split()
    arr = None
    if len(tokens) == 4 * count:
        try:
            arr = np.array(tokens, dtype=float).reshape(count, 4)
        except ValueError:
            arr = None
    if arr is None:
        for i, line in enumerate(body, start=2):
            parts = line.split()
            if len(parts) != 4:
                raise FormatError(path, i, "expected 'x y z intensity'")
            try:
                [float(p) for p in parts]
            except ValueError:
                raise FormatError(path, i, "non-numeric value") from None
        raise FormatError(path, 1, "unparseable body")
    try:
        return PointCloud(arr[:, :3], arr[:, 3], stamp, frame_id)
    except ValueError as exc:
        bad = int(np.argmax(~np.isfinite(arr).all(axis=1) | (arr[:, 3] < 0) | (arr[:, 3] > 1)))
        raise FormatError(path, bad + 2, str(exc)) from None
