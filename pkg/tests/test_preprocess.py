import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

from lidarodom.exceptions import TooFewPoints
from lidarodom.geometry import PointCloud
from lidarodom.preprocess import (
    PreprocessConfig,
    RangeCropper,
    StatisticalOutlierRemover,
    VoxelDownsampler,
    anomaly_gate,
    condition_scan,
    crop_range,
    outlier_mask,
    voxel_downsample,
)


def brute_voxel(xyz, leaf):
    cells = {}
    for p in xyz:
        cells.setdefault(tuple(np.floor(p / leaf).astype(int)), []).append(p)
    return {k: np.mean(v, axis=0) for k, v in cells.items()}


def brute_sor_mask(xyz, k, mult):
    d = np.linalg.norm(xyz[:, None] - xyz[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    mean_d = np.sort(d, axis=1)[:, :k].mean(axis=1)
    return mean_d <= mean_d.mean() + mult * mean_d.std(ddof=1) + 1e-12 * max(mean_d.mean(), 1.0)


class TestCrop:
    def test_shell(self):
        cloud = PointCloud([[0.5, 0, 0], [1.0, 0, 0], [50, 0, 0], [80, 0, 0], [80.1, 0, 0]])
        kept = crop_range(cloud, PreprocessConfig(min_range=1.0, max_range=80.0))
        np.testing.assert_array_equal(kept.xyz[:, 0], [1.0, 50.0, 80.0])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PreprocessConfig(min_range=5, max_range=1)
        with pytest.raises(ValueError):
            PreprocessConfig(voxel_leaf=0)


class TestVoxel:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 200), st.floats(0.05, 2.0), st.integers(0, 2**31 - 1))
    def test_matches_brute_force_centroids(self, n, leaf, seed):
        xyz = np.random.default_rng(seed).uniform(-3, 3, (n, 3))
        out = voxel_downsample(PointCloud(xyz), leaf)
        ref = np.array(list(brute_voxel(xyz, leaf).values()))
        assert len(out) == len(ref)
        np.testing.assert_allclose(out.xyz[np.lexsort(out.xyz.T)], ref[np.lexsort(ref.T)], atol=1e-9)

    def test_single_cell(self):
        out = voxel_downsample(PointCloud([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2]], [0.2, 0.4]), 1.0)
        np.testing.assert_allclose(out.xyz, [[0.15, 0.15, 0.15]])
        np.testing.assert_allclose(out.intensity, [0.3])

    def test_bad_leaf(self):
        with pytest.raises(ValueError):
            voxel_downsample(PointCloud(np.zeros((1, 3))), 0.0)


class TestOutliers:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        xyz = np.vstack([rng.normal(size=(150, 3)), rng.uniform(-20, 20, (8, 3))])
        np.testing.assert_array_equal(outlier_mask(PointCloud(xyz), 8, 1.0), brute_sor_mask(xyz, 8, 1.0))

    def test_far_points_removed(self):
        rng = np.random.default_rng(0)
        xyz = np.vstack([rng.normal(size=(300, 3)), [[50, 50, 50], [-60, 10, 0]]])
        mask = outlier_mask(PointCloud(xyz), 16, 1.5)
        assert not mask[-2:].any()

    def test_uniform_grid_keeps_everything(self):
        g = np.stack(np.meshgrid(*[np.arange(6.0)] * 3), -1).reshape(-1, 3)
        # interior and boundary neighbourhoods differ, but nothing is far out
        assert outlier_mask(PointCloud(g), 6, 3.0).all()

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            outlier_mask(PointCloud(np.zeros((5, 3))), k=5)

    def test_condition_scan_reports_fraction(self):
        rng = np.random.default_rng(1)
        xyz = np.vstack([rng.normal(size=(500, 3)) + [10, 0, 0], [[10, 40, 0]]])
        kept, frac = condition_scan(PointCloud(xyz))
        assert len(kept) < 501 and frac == pytest.approx(1 - len(kept) / 501)


class TestAnomalyGate:
    @pytest.mark.parametrize(
        "prev, cur, ok", [(0, 10, True), (10000, 10000, True), (10000, 5000, True), (10000, 4999, False),
                          (1000, 100, False), (100, 1000, False)]
    )
    def test_ratio(self, prev, cur, ok):
        assert anomaly_gate(prev, cur, 0.5) is ok

    @given(st.integers(1, 10**6), st.integers(0, 10**6))
    def test_symmetric(self, a, b):
        assert anomaly_gate(a, b) == anomaly_gate(b, a) or b == 0


class TestTransformers:
    def test_pipeline_on_arrays(self):
        rng = np.random.default_rng(2)
        X = np.column_stack([rng.normal(size=(400, 3)) * 3 + [10, 0, 0], rng.random(400)])
        pipe = make_pipeline(RangeCropper(1.0, 80.0), StatisticalOutlierRemover(8, 2.0), VoxelDownsampler(0.5))
        out = pipe.fit_transform(X)
        assert out.shape[1] == 4 and 0 < len(out) < 400

    def test_clone_and_params(self):
        est = StatisticalOutlierRemover(k=10, stddev_mult=2.0)
        assert clone(est).get_params() == {"k": 10, "stddev_mult": 2.0}

    def test_removed_fraction(self):
        rng = np.random.default_rng(3)
        X = np.vstack([rng.normal(size=(200, 3)), [[100, 0, 0]]])
        sor = StatisticalOutlierRemover(8, 1.5).fit(X)
        out = sor.transform(X)
        assert sor.removed_fraction_ == pytest.approx(1 - len(out) / 201)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            RangeCropper().fit(np.zeros((3, 2)))
        with pytest.raises(ValueError):
            VoxelDownsampler().fit(np.array([[0.0, np.inf, 0.0]]))
