"""NMEA parsing, geodesy, odometry integration and the switching filter."""

import math
from functools import reduce

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarodom.exceptions import BadChecksum, FormatError, MalformedField, NotGga
from lidarodom.geometry import compose, planar_transform, yaw_of
from lidarodom.navfusion import (FusedState, FusionConfig, GpsFix, GpsTrust, LocalPose, PoseSource, Reference,
                                 format_gga, fuse_step, geodetic_to_local, gps_validity, integrate_odometry,
                                 local_to_geodetic, nmea_checksum, parse_gps_log, parse_nmea_gga,
                                 read_trajectory_csv, wrap_angle, write_gps_log, write_trajectory_csv)
from lidarodom.planar import PlanarMotion

SAMPLE = "$GPGGA,123519,4807.038,N,01131.000,E,1,08,0.9,545.4,M,46.9,M,,*47"
REF = Reference()


def _fix_at(x, y, t=0.0, hdop=0.9, quality=1):
    lat, lon = local_to_geodetic(x, y, REF.lat, REF.lon)
    return GpsFix(t, lat, lon, quality, 8, hdop)


# --- NMEA --------------------------------------------------------------------

def test_parse_sample_sentence():
    fix = parse_nmea_gga(SAMPLE)
    assert fix.latitude == pytest.approx(48 + 7.038 / 60, abs=1e-9)
    assert fix.longitude == pytest.approx(11 + 31.0 / 60, abs=1e-9)
    assert round(fix.latitude, 4) == 48.1173 and round(fix.longitude, 4) == 11.5167
    assert fix.fix_quality == 1 and fix.hdop == 0.9 and fix.satellites == 8
    assert fix.time_of_day == 12 * 3600 + 35 * 60 + 19


def test_checksum_is_xor_of_payload():
    payload = SAMPLE[1:SAMPLE.index("*")]
    expected = 0
    for b in payload.encode():
        expected ^= b
    assert nmea_checksum(payload) == expected == 0x47


def test_bad_checksum():
    with pytest.raises(BadChecksum):
        parse_nmea_gga(SAMPLE[:-2] + "48")


def test_not_gga():
    payload = "GPRMC,123519,A,4807.038,N,01131.000,E,022.4,084.4,230394,003.1,W"
    with pytest.raises(NotGga):
        parse_nmea_gga(f"${payload}*{nmea_checksum(payload):02X}")


@pytest.mark.parametrize("field, bad", [(2, "48x7.038"), (3, "Q"), (6, "7"), (8, "abc")])
def test_malformed_field(field, bad):
    fields = SAMPLE[1:SAMPLE.index("*")].split(",")
    fields[field] = bad
    payload = ",".join(fields)
    with pytest.raises(MalformedField):
        parse_nmea_gga(f"${payload}*{nmea_checksum(payload):02X}")


@settings(max_examples=100, deadline=None)
@given(lat=st.floats(-89.9, 89.9), lon=st.floats(-179.9, 179.9), tod=st.floats(0, 86399),
       hdop=st.floats(0, 50), quality=st.sampled_from([1, 2]), sats=st.integers(0, 40))
def test_format_parse_round_trip(lat, lon, tod, hdop, quality, sats):
    fix = GpsFix(round(tod, 2), lat, lon, quality, sats, round(hdop, 1))
    back = parse_nmea_gga(format_gga(fix))
    assert back.latitude == pytest.approx(lat, abs=1e-9)
    assert back.longitude == pytest.approx(lon, abs=1e-9)
    assert back.fix_quality == quality and back.satellites == sats and back.hdop == fix.hdop
    assert back.time_of_day == pytest.approx(fix.time_of_day, abs=1e-6)


def test_gps_log_round_trip_and_errors(tmp_path):
    path = tmp_path / "gps.log"
    write_gps_log(path, [(0.0, SAMPLE), (1.0, None), (2.0, format_gga(_fix_at(3, 4)))])
    events = parse_gps_log(path)
    assert [t for t, _ in events] == [0.0, 2.0]
    bad = tmp_path / "bad.log"
    bad.write_text(f"0.0 {SAMPLE}\n1.0 {SAMPLE[:-2]}00\n")
    with pytest.raises(FormatError) as info:
        parse_gps_log(bad)
    assert info.value.line == 2


# --- geodesy -----------------------------------------------------------------

def test_reference_point_maps_to_origin():
    assert geodetic_to_local((42.0, -71.0), 42.0, -71.0) == (0.0, 0.0)


def test_small_offsets_at_42_degrees():
    x, y = geodetic_to_local((42.0 + 1e-5, -71.0), 42.0, -71.0)
    assert x == 0.0 and y == pytest.approx(1.11, abs=0.01)
    x, y = geodetic_to_local((42.0, -71.0 + 1e-5), 42.0, -71.0)
    assert y == 0.0 and x == pytest.approx(0.83, abs=0.01)


@given(x=st.floats(-5000, 5000), y=st.floats(-5000, 5000))
def test_local_geodetic_round_trip(x, y):
    lat, lon = local_to_geodetic(x, y, REF.lat, REF.lon)
    bx, by = geodetic_to_local((lat, lon), REF.lat, REF.lon)
    assert bx == pytest.approx(x, abs=1e-6) and by == pytest.approx(y, abs=1e-6)


# --- odometry ----------------------------------------------------------------

def test_integrate_examples():
    p = integrate_odometry(LocalPose(0, 0, 0, 0), PlanarMotion(0, 1, 0))
    assert (p.x, p.y, p.yaw) == (1, 0, 0) and p.source is PoseSource.LIDAR
    p = integrate_odometry(LocalPose(0, 0, 0, math.pi / 2), PlanarMotion(0, 1, 0))
    assert p.x == pytest.approx(0, abs=1e-12) and p.y == pytest.approx(1) and p.yaw == pytest.approx(math.pi / 2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-0.3, 0.3), st.floats(-2, 2), st.floats(-2, 2)), min_size=1, max_size=30))
def test_chain_equals_composed_transform(steps):
    pose = LocalPose(0, 1.0, -2.0, 0.4)
    for yaw, dx, dy in steps:
        pose = integrate_odometry(pose, PlanarMotion(yaw, dx, dy))
    start = planar_transform(0.4, 1.0, -2.0)
    total = reduce(lambda acc, s: compose(acc, planar_transform(*s)), steps, start)
    assert pose.x == pytest.approx(total.translation[0], abs=1e-9)
    assert pose.y == pytest.approx(total.translation[1], abs=1e-9)
    assert wrap_angle(pose.yaw - yaw_of(total)) == pytest.approx(0, abs=1e-9)


# --- validity ----------------------------------------------------------------

def test_validity_examples():
    cfg = FusionConfig()
    pred = LocalPose(0, 10, 10, 0)
    assert gps_validity(_fix_at(10, 10, quality=0), pred, cfg, REF) is GpsTrust.LOST
    assert gps_validity(None, pred, cfg, REF) is GpsTrust.LOST
    assert gps_validity(_fix_at(10, 10, hdop=5.0), pred, cfg, REF) is GpsTrust.SUSPECT
    assert gps_validity(_fix_at(40, 10), pred, cfg, REF) is GpsTrust.SUSPECT
    assert gps_validity(_fix_at(11, 10), pred, cfg, REF) is GpsTrust.TRUSTED
    assert gps_validity(_fix_at(11, 10), pred, cfg, REF, step_predicted=(13, 10)) is GpsTrust.SUSPECT


def test_validity_is_pure():
    cfg = FusionConfig()
    fix, pred = _fix_at(3, 4), LocalPose(0, 0, 0, 0)
    assert len({gps_validity(fix, pred, cfg, REF) for _ in range(5)}) == 1


def test_fusion_config_validation():
    with pytest.raises(ValueError):
        FusionConfig(jump_gate=0)
    with pytest.raises(ValueError):
        FusionConfig(heading_gain=2)


# --- switching filter --------------------------------------------------------

def _run(events, cfg=FusionConfig(), start=LocalPose(0, 0, 0, 0)):
    state = FusedState.start(start)
    out = [state]
    for t, fix, odom in events:
        state = fuse_step(state, fix, odom, cfg, REF, t=t)
        out.append(state)
    return out


def test_gps_only_stream_equals_gps_track():
    events = [(t, _fix_at(2.0 * t, 0.5 * t, t), None) for t in range(1, 20)]
    for (t, fix, _), s in zip(events, _run(events)[1:]):
        x, y = geodetic_to_local(fix, REF.lat, REF.lon)
        assert (s.pose.x, s.pose.y) == pytest.approx((x, y), abs=1e-9)
        assert s.pose.source is PoseSource.GPS and s.gps_trust is GpsTrust.TRUSTED


def test_blackout_with_perfect_odometry():
    """10 Hz odometry at 2 m/s, 1 Hz GPS missing between 5 s and 35 s."""
    cfg = FusionConfig()
    events = []
    for k in range(1, 401):
        t = k / 10.0
        fix = _fix_at(2.0 * t, 0.0, t) if k % 10 == 0 and not 5 <= t <= 35 else None
        events.append((t, fix, PlanarMotion(0.0, 0.2, 0.0)))
    states = _run(events, cfg)
    for prev, cur in zip(states, states[1:]):
        step = math.hypot(cur.pose.x - prev.pose.x, cur.pose.y - prev.pose.y)
        assert step <= cfg.max_speed * (cur.pose.t - prev.pose.t) + 1e-9
    assert any(s.gps_trust is GpsTrust.LOST for s in states)
    recovered = next(s for s in states if s.pose.t == 36.0)
    assert recovered.gps_trust is GpsTrust.TRUSTED
    assert recovered.pose.x == pytest.approx(72.0, abs=1e-6) and recovered.pose.y == pytest.approx(0, abs=1e-6)


def test_recovery_blends_monotonically():
    """Odometry overestimates by 3 m over the gap; the fused pose converges within 5 fixes."""
    cfg = FusionConfig(reanchor_blend=5)
    events = [(1.0, _fix_at(1.0, 0, 1.0), PlanarMotion(0, 1.0, 0))]
    for t in range(2, 8):
        events.append((float(t), None, PlanarMotion(0, 1.5, 0)))
    for t in range(8, 16):
        events.append((float(t), _fix_at(float(t), 0, float(t)), PlanarMotion(0, 1.0, 0)))
    states = _run(events, cfg)
    # the first fix disagrees with pre-gap fix + odometry by 3.5 m, so the step gate holds it back
    assert states[8].pose.t == 8 and states[8].gps_trust is GpsTrust.SUSPECT
    after = [s for s in states if s.pose.t >= 9]
    errors = [abs(s.pose.x - s.pose.t) for s in after]
    assert errors[0] == pytest.approx(3.0, abs=1e-6)
    assert all(b <= a + 1e-9 for a, b in zip(errors, errors[1:]))
    assert errors[5] == pytest.approx(0, abs=1e-9)
    assert after[1].pose.source is PoseSource.FUSED


def test_jump_gate_rejects_multipath_fix():
    events = [(1.0, _fix_at(1, 0, 1.0), PlanarMotion(0, 1, 0)), (2.0, _fix_at(2, 30, 2.0), PlanarMotion(0, 1, 0))]
    last = _run(events)[-1]
    assert last.gps_trust is GpsTrust.SUSPECT
    assert (last.pose.x, last.pose.y) == pytest.approx((2.0, 0.0), abs=1e-6)


def test_step_gate_catches_slow_drift():
    """A bias growing 1.5 m per fix stays inside the jump gate but fails the step gate."""
    events = [(1.0, _fix_at(1, 0, 1.0), PlanarMotion(0, 1, 0)), (2.0, _fix_at(2, 1.5, 2.0), PlanarMotion(0, 1, 0))]
    assert _run(events)[-1].gps_trust is GpsTrust.SUSPECT


def test_timeout_marks_lost():
    events = [(t / 10, None, PlanarMotion(0, 0.1, 0)) for t in range(1, 30)]
    assert _run(events)[-1].gps_trust is GpsTrust.LOST


def test_fuse_step_argument_checks():
    state = FusedState.start(LocalPose(5.0, 0, 0, 0))
    with pytest.raises(ValueError):
        fuse_step(state, None, None, FusionConfig(), REF, t=6.0)
    with pytest.raises(ValueError):
        fuse_step(state, None, PlanarMotion(), FusionConfig(), REF, t=4.0)


def test_trajectory_csv_round_trip(tmp_path):
    poses = [LocalPose(0.1 * i, i * 1.5, -i, wrap_angle(0.3 * i), PoseSource.LIDAR) for i in range(20)]
    path = tmp_path / "trajectory.csv"
    write_trajectory_csv(path, poses)
    assert path.read_text().splitlines()[0] == "t,x,y,yaw,source"
    back = read_trajectory_csv(path)
    for a, b in zip(poses, back):
        assert (b.t, b.x, b.y, b.yaw) == pytest.approx((a.t, a.x, a.y, a.yaw), abs=1e-6)
        assert b.source is a.source
    bad = tmp_path / "bad.csv"
    bad.write_text("t,x,y,yaw\n0,1,2,3\n0,1,x,3\n")
    with pytest.raises(FormatError) as info:
        read_trajectory_csv(bad)
    assert info.value.line == 3
