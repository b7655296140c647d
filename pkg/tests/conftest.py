"""Shared fixtures: small simulated scans and datasets, cached per session."""

import pytest

from lidarodom import sim
from lidarodom.navfusion import LocalPose


@pytest.fixture(scope="session")
def bridge_scene():
    return sim.bridge_crossing_scene()


@pytest.fixture(scope="session")
def bridge_scan(bridge_scene):
    """One sweep from under the bridge deck."""
    return sim.raycast_scan(bridge_scene, LocalPose(0.0, 120.0, 0.5, 0.05), rng_seed=7)


@pytest.fixture(scope="session")
def bridge_pair(bridge_scene):
    """Two consecutive sweeps 0.2 m and 0.3 deg apart, with their true poses."""
    p0 = LocalPose(0.0, 110.0, 0.0, 0.0)
    p1 = LocalPose(0.1, 110.2, 0.0, 0.005236)
    return (sim.raycast_scan(bridge_scene, p0, rng_seed=1), sim.raycast_scan(bridge_scene, p1, rng_seed=2), p0, p1)


@pytest.fixture(scope="session")
def short_dataset(bridge_scene):
    """3 s bridge run at 2 m/s with a 1 s GPS blackout."""
    traj = sim.straight_trajectory(100.0, 0.0, 0.0, 2.0, 3.0)
    gps = sim.GpsCorruptionModel(blackout_windows=((1.0, 2.0),))
    return sim.simulate_run(bridge_scene, traj, gps=gps, seed=5)


@pytest.fixture(scope="session")
def short_dataset_dir(short_dataset, tmp_path_factory):
    path = tmp_path_factory.mktemp("ds") / "bridge"
    sim.write_dataset(path, short_dataset)
    return path
