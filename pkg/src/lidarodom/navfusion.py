"""GPS ingestion and the GPS / scan-matching switching filter.

The filter keeps one dead-reckoned estimate, ``anchor (+) odometry``, where the
anchor is the last trusted GPS fix. Trusted fixes move the anchor; suspect or
missing fixes leave it alone so the estimate rides on odometry alone. When
GPS comes back after a gap the correction is blended in over a few fixes, and
every output step is rate limited to ``max_speed * dt``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from .exceptions import BadChecksum, FormatError, MalformedField, NmeaError, NotGga

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    return math.pi if a <= -math.pi else a


class GpsTrust(str, enum.Enum):
    TRUSTED = "trusted"
    SUSPECT = "suspect"
    LOST = "lost"


class PoseSource(str, enum.Enum):
    GPS = "gps"
    LIDAR = "lidar"
    FUSED = "fused"


@dataclass(frozen=True)
class GpsFix:
    time_of_day: float
    latitude: float
    longitude: float
    fix_quality: int = 1
    satellites: int = 8
    hdop: float = 1.0
    altitude: float = 0.0

    def __post_init__(self):
        if self.fix_quality not in (0, 1, 2):
            raise ValueError("fix_quality must be 0, 1 or 2")
        if self.fix_quality and not (abs(self.latitude) <= 90 and abs(self.longitude) <= 180):
            raise ValueError("latitude/longitude out of range")
        if not self.hdop >= 0:
            raise ValueError("hdop must be non-negative")


@dataclass(frozen=True)
class LocalPose:
    t: float
    x: float
    y: float
    yaw: float = 0.0
    source: PoseSource = PoseSource.GPS

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.t, self.x, self.y, self.yaw)):
            raise ValueError("pose fields must be finite")
        object.__setattr__(self, "source", PoseSource(self.source))

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Reference:
    """Geodetic origin of the local east-north frame."""

    lat: float = 42.3550
    lon: float = -71.0700


# --- NMEA --------------------------------------------------------------------

def nmea_checksum(payload: str) -> int:
    value = 0
    for ch in payload.encode("ascii", errors="replace"):
        value ^= ch
    return value


def _parse_angle(value: str, hemi: str, deg_digits: int, index: int, positive: str, negative: str) -> float:
    if value.find(".") != deg_digits + 2:
        raise MalformedField(index, value)
    try:
        degrees = int(value[:deg_digits])
        minutes = float(value[deg_digits:])
    except ValueError:
        raise MalformedField(index, value) from None
    if not 0 <= minutes < 60:
        raise MalformedField(index, value)
    angle = degrees + minutes / 60.0
    if hemi == negative:
        angle = -angle
    elif hemi != positive:
        raise MalformedField(index + 1, hemi)
    return angle


def parse_nmea_gga(sentence: str) -> GpsFix:
    """Parse and checksum-verify one GGA sentence.

    Raises
    ------
    BadChecksum, NotGga, MalformedField
    """
    s = sentence.strip()
    if not s.startswith("$") or "*" not in s:
        raise MalformedField(0, s[:16])
    payload, _, checksum = s[1:].rpartition("*")
    try:
        expected = int(checksum[:2], 16)
    except ValueError:
        raise BadChecksum(f"unreadable checksum {checksum!r}") from None
    if len(checksum.strip()) != 2 or nmea_checksum(payload) != expected:
        raise BadChecksum(f"checksum mismatch in {s!r}")
    fields = payload.split(",")
    if len(fields[0]) != 5 or not fields[0].endswith("GGA"):
        raise NotGga(fields[0])
    if len(fields) < 10:
        raise MalformedField(len(fields), "missing fields")

    t = fields[1]
    try:
        time_of_day = int(t[0:2]) * 3600 + int(t[2:4]) * 60 + float(t[4:])
    except ValueError:
        raise MalformedField(1, t) from None
    try:
        quality = int(fields[6])
    except ValueError:
        raise MalformedField(6, fields[6]) from None
    if quality not in (0, 1, 2):
        raise MalformedField(6, fields[6])
    if quality == 0 and not fields[2]:
        lat = lon = math.nan
    else:
        lat = _parse_angle(fields[2], fields[3], 2, 2, "N", "S")
        lon = _parse_angle(fields[4], fields[5], 3, 4, "E", "W")
        if abs(lat) > 90:
            raise MalformedField(2, fields[2])
        if abs(lon) > 180:
            raise MalformedField(4, fields[4])
    values = []
    for index, conv, default in ((7, int, 0), (8, float, 99.9), (9, float, 0.0)):
        raw = fields[index]
        if raw == "":
            values.append(default)
            continue
        try:
            values.append(conv(raw))
        except ValueError:
            raise MalformedField(index, raw) from None
    satellites, hdop, altitude = values
    if hdop < 0 or not math.isfinite(hdop):
        raise MalformedField(8, fields[8])
    return GpsFix(time_of_day, lat, lon, quality, satellites, hdop, altitude)


def format_gga(fix: GpsFix, decimals: int = 7, talker: str = "GP") -> str:
    """Serialise a fix as a GGA sentence with a valid checksum."""
    tod = fix.time_of_day % 86400.0
    hh = int(tod // 3600)
    mm = int(tod % 3600 // 60)
    ss = tod - hh * 3600 - mm * 60
    time_s = f"{hh:02d}{mm:02d}{ss:05.2f}"
    if fix.fix_quality == 0 and not math.isfinite(fix.latitude):
        lat_s = hemi_lat = lon_s = hemi_lon = ""
    else:
        lat_s, hemi_lat = _format_angle(fix.latitude, 2, decimals, "N", "S")
        lon_s, hemi_lon = _format_angle(fix.longitude, 3, decimals, "E", "W")
    payload = (
        f"{talker}GGA,{time_s},{lat_s},{hemi_lat},{lon_s},{hemi_lon},{fix.fix_quality},"
        f"{fix.satellites:02d},{fix.hdop:.1f},{fix.altitude:.1f},M,0.0,M,,"
    )
    return f"${payload}*{nmea_checksum(payload):02X}"


def _format_angle(angle, deg_digits, decimals, positive, negative):
    hemi = positive if angle >= 0 else negative
    a = abs(angle)
    degrees = int(a)
    minutes = round((a - degrees) * 60.0, decimals)
    if minutes >= 60.0:
        degrees += 1
        minutes -= 60.0
    width = 3 + decimals
    return f"{degrees:0{deg_digits}d}{minutes:0{width}.{decimals}f}", hemi


# --- geodesy -----------------------------------------------------------------

def curvature_radii(lat_deg: float) -> tuple[float, float]:
    """Meridian and prime-vertical radii of curvature at a latitude."""
    s = math.sin(math.radians(lat_deg))
    w = 1.0 - WGS84_E2 * s * s
    return WGS84_A * (1.0 - WGS84_E2) / w**1.5, WGS84_A / math.sqrt(w)


def geodetic_to_local(fix, ref_lat: float, ref_lon: float) -> tuple[float, float]:
    """Tangent-plane (east, north) offset of ``fix`` from the reference point.

    ``fix`` may be a :class:`GpsFix` or a ``(lat, lon)`` pair.
    """
    lat, lon = (fix.latitude, fix.longitude) if isinstance(fix, GpsFix) else fix
    r_m, r_n = curvature_radii(ref_lat)
    y = math.radians(lat - ref_lat) * r_m
    x = math.radians(lon - ref_lon) * r_n * math.cos(math.radians(ref_lat))
    return x, y


def local_to_geodetic(x: float, y: float, ref_lat: float, ref_lon: float) -> tuple[float, float]:
    r_m, r_n = curvature_radii(ref_lat)
    lat = ref_lat + math.degrees(y / r_m)
    lon = ref_lon + math.degrees(x / (r_n * math.cos(math.radians(ref_lat))))
    return lat, lon


# --- odometry ----------------------------------------------------------------

def integrate_odometry(pose: LocalPose, rel, t: Optional[float] = None) -> LocalPose:
    """Advance ``pose`` by one ego-motion step.

    ``rel`` carries ``yaw``, ``dx`` and ``dy``: the new vehicle pose expressed
    in the previous vehicle frame (x forward, y left).
    """
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    return LocalPose(
        pose.t if t is None else t,
        pose.x + c * rel.dx - s * rel.dy,
        pose.y + s * rel.dx + c * rel.dy,
        wrap_angle(pose.yaw + rel.yaw),
        PoseSource.LIDAR,
    )


# --- switching filter --------------------------------------------------------

@dataclass(frozen=True)
class FusionConfig:
    hdop_threshold: float = 2.0
    jump_gate: float = 5.0
    max_speed: float = 5.0
    reanchor_blend: int = 5
    # fix-to-fix displacement must agree with odometry; catches slowly growing multipath bias
    step_gate: float = 1.0
    gps_timeout: float = 1.5
    dead_reckoning_limit: float = 60.0
    heading_baseline: float = 30.0
    heading_gain: float = 0.5

    def __post_init__(self):
        for name in ("hdop_threshold", "jump_gate", "max_speed", "reanchor_blend", "step_gate",
                     "gps_timeout", "dead_reckoning_limit", "heading_baseline"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.heading_gain <= 1:
            raise ValueError("heading_gain must lie in [0, 1]")


def gps_validity(fix: Optional[GpsFix], predicted: Optional[LocalPose], cfg: FusionConfig,
                 ref: Reference, step_predicted=None) -> GpsTrust:
    """Classify a fix as trusted, suspect or lost.

    ``predicted`` is the odometry-propagated pose from the last trusted fix;
    ``step_predicted`` (optional) is the previous fix of any trust level moved
    by the odometry since then. A low HDOP alone is never enough.
    """
    if fix is None or fix.fix_quality == 0:
        return GpsTrust.LOST
    if fix.hdop > cfg.hdop_threshold:
        return GpsTrust.SUSPECT
    x, y = geodetic_to_local(fix, ref.lat, ref.lon)
    if predicted is not None and math.hypot(x - predicted.x, y - predicted.y) > cfg.jump_gate:
        return GpsTrust.SUSPECT
    if step_predicted is not None and math.hypot(x - step_predicted[0], y - step_predicted[1]) > cfg.step_gate:
        return GpsTrust.SUSPECT
    return GpsTrust.TRUSTED


@dataclass(frozen=True)
class FusedState:
    """Filter state; only :func:`fuse_step` produces new states."""

    pose: LocalPose
    gps_trust: GpsTrust
    anchor: LocalPose
    odometry_since_anchor: tuple = ()
    dead_reckoned: LocalPose = None
    has_odometry: bool = False
    last_fix_xy: Optional[tuple] = None
    odom_since_fix: tuple = (0.0, 0.0)
    last_gps_t: Optional[float] = None
    last_trusted_t: float = 0.0
    fix_period: float = 1.0
    blend_offset: tuple = (0.0, 0.0)
    blend_start: float = 0.0
    blend_duration: float = 0.0
    odo_track: tuple = (0.0, 0.0)
    heading_ref: Optional[tuple] = None
    dead_reckoning_only: bool = False

    @classmethod
    def start(cls, pose: LocalPose) -> "FusedState":
        """Initial state anchored at ``pose`` (normally the first good fix)."""
        anchor = replace(pose, source=PoseSource.GPS)
        return cls(
            pose=anchor, gps_trust=GpsTrust.TRUSTED, anchor=anchor, dead_reckoned=anchor,
            last_trusted_t=pose.t, heading_ref=None,
        )

    def blend_factor(self, t: float) -> float:
        if self.blend_duration <= 0:
            return 0.0
        return max(0.0, 1.0 - (t - self.blend_start) / self.blend_duration)


def fuse_step(state: FusedState, gps: Optional[GpsFix], odom, cfg: FusionConfig, ref: Reference,
              *, t: float) -> FusedState:
    """Consume one event (a fix, an odometry step, or both) at time ``t``."""
    if gps is None and odom is None:
        raise ValueError("fuse_step needs a fix, an odometry step, or both")
    dt = t - state.pose.t
    if dt < -1e-9:
        raise ValueError(f"timestamps must be non-decreasing ({t} < {state.pose.t})")
    dt = max(dt, 0.0)

    dr = state.dead_reckoned
    chain = state.odometry_since_anchor
    has_odom = state.has_odometry
    odom_since_fix = state.odom_since_fix
    odo_track = state.odo_track
    if odom is not None:
        moved = integrate_odometry(dr, odom, t)
        dx, dy = moved.x - dr.x, moved.y - dr.y
        dr = moved
        chain = chain + (odom,)
        has_odom = True
        odom_since_fix = (odom_since_fix[0] + dx, odom_since_fix[1] + dy)
        odo_track = (odo_track[0] + dx, odo_track[1] + dy)
    else:
        dr = replace(dr, t=t)

    trust = state.gps_trust
    anchor = state.anchor
    last_fix_xy = state.last_fix_xy
    last_gps_t = state.last_gps_t
    last_trusted_t = state.last_trusted_t
    fix_period = state.fix_period
    blend = (state.blend_offset, state.blend_start, state.blend_duration)
    heading_ref = state.heading_ref

    if gps is not None:
        predicted = dr if has_odom else None
        step_pred = None
        if has_odom and last_fix_xy is not None:
            step_pred = (last_fix_xy[0] + odom_since_fix[0], last_fix_xy[1] + odom_since_fix[1])
        verdict = gps_validity(gps, predicted, cfg, ref, step_pred)
        if last_gps_t is not None and t > last_gps_t:
            fix_period = t - last_gps_t
        last_gps_t = t
        if gps.fix_quality:
            last_fix_xy = geodetic_to_local(gps, ref.lat, ref.lon)
            odom_since_fix = (0.0, 0.0)
        if verdict is GpsTrust.TRUSTED:
            fx, fy = last_fix_xy
            yaw = dr.yaw
            if heading_ref is not None and has_odom:
                (gx0, gy0), (ox0, oy0) = heading_ref
                g = (fx - gx0, fy - gy0)
                o = (odo_track[0] - ox0, odo_track[1] - oy0)
                if math.hypot(*g) >= cfg.heading_baseline and math.hypot(*o) >= 0.5 * cfg.heading_baseline:
                    err = wrap_angle(math.atan2(g[1], g[0]) - math.atan2(o[1], o[0]))
                    yaw = wrap_angle(yaw + cfg.heading_gain * err)
                    heading_ref = None
            if heading_ref is None or trust is not GpsTrust.TRUSTED:
                heading_ref = ((fx, fy), odo_track)
            if trust is not GpsTrust.TRUSTED:
                # offset from where the output would be now without this fix
                k = state.blend_factor(t)
                offset = (dr.x + state.blend_offset[0] * k - fx, dr.y + state.blend_offset[1] * k - fy)
                blend = (offset, t, cfg.reanchor_blend * fix_period)
            anchor = LocalPose(t, fx, fy, yaw, PoseSource.GPS)
            dr = anchor
            chain = ()
            last_trusted_t = t
        else:
            heading_ref = None
        trust = verdict
    elif last_gps_t is None or t - last_gps_t > cfg.gps_timeout:
        if trust is GpsTrust.TRUSTED:
            heading_ref = None
        trust = GpsTrust.LOST

    offset, b_start, b_dur = blend
    tmp = replace(state, blend_offset=offset, blend_start=b_start, blend_duration=b_dur)
    factor = tmp.blend_factor(t)
    tx = dr.x + offset[0] * factor
    ty = dr.y + offset[1] * factor
    if factor <= 0:
        offset, b_dur = (0.0, 0.0), 0.0

    if factor > 0:
        source = PoseSource.FUSED
    elif trust is GpsTrust.TRUSTED:
        source = PoseSource.GPS
    else:
        source = PoseSource.LIDAR

    if has_odom:
        step = math.hypot(tx - state.pose.x, ty - state.pose.y)
        limit = cfg.max_speed * dt
        if step > limit:
            scale = limit / step
            tx = state.pose.x + (tx - state.pose.x) * scale
            ty = state.pose.y + (ty - state.pose.y) * scale

    return FusedState(
        pose=LocalPose(t, tx, ty, dr.yaw, source),
        gps_trust=trust,
        anchor=anchor,
        odometry_since_anchor=chain,
        dead_reckoned=dr,
        has_odometry=has_odom,
        last_fix_xy=last_fix_xy,
        odom_since_fix=odom_since_fix,
        last_gps_t=last_gps_t,
        last_trusted_t=last_trusted_t,
        fix_period=fix_period,
        blend_offset=offset,
        blend_start=b_start,
        blend_duration=b_dur,
        odo_track=odo_track,
        heading_ref=heading_ref,
        dead_reckoning_only=(t - last_trusted_t) > cfg.dead_reckoning_limit,
    )


# --- file formats ------------------------------------------------------------

def _gps_log_lines(path):
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FormatError(path, 0, f"cannot read: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        stamp, _, sentence = line.strip().partition(" ")
        try:
            t = float(stamp)
        except ValueError:
            raise FormatError(path, lineno, f"bad timestamp {stamp!r}") from None
        if not sentence.strip():
            raise FormatError(path, lineno, "missing NMEA sentence")
        yield lineno, t, sentence.strip()


def read_gps_log(path) -> list[tuple[float, str]]:
    """Read ``<epoch_seconds> <NMEA sentence>`` lines."""
    return [(t, sentence) for _, t, sentence in _gps_log_lines(path)]


def parse_gps_log(path) -> list[tuple[float, GpsFix]]:
    """Read and parse a GPS log; NMEA errors become :class:`FormatError`."""
    out = []
    for lineno, t, sentence in _gps_log_lines(path):
        try:
            out.append((t, parse_nmea_gga(sentence)))
        except NmeaError as exc:
            raise FormatError(path, lineno, str(exc)) from None
    return out


def write_gps_log(path, events) -> None:
    with open(path, "w") as fh:
        for t, sentence in events:
            if sentence is not None:
                fh.write(f"{t:.3f} {sentence}\n")


TRAJECTORY_HEADER = ["t", "x", "y", "yaw", "source"]


def write_trajectory_csv(path, poses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for p in poses:
            w.writerow([f"{p.t:.6f}", f"{p.x:.6f}", f"{p.y:.6f}", f"{p.yaw:.6f}", PoseSource(p.source).value])


def read_trajectory_csv(path) -> list[LocalPose]:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise FormatError(path, 0, f"cannot read: {exc}") from exc
    poses = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:4] != TRAJECTORY_HEADER[:4]:
            raise FormatError(path, 1, "expected header t,x,y,yaw[,source]")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t, x, y, yaw = (float(v) for v in row[:4])
                source = row[4] if len(row) > 4 else "gps"
                poses.append(LocalPose(t, x, y, yaw, source))
            except (ValueError, IndexError) as exc:
                raise FormatError(path, lineno, str(exc)) from None
    return poses
