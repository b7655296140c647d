"""Scan conditioning: range crop, voxel grid, statistical outlier removal.

The functional API works on :class:`PointCloud`; the estimator classes at the
bottom wrap the same code as scikit-learn transformers over ``(N, 3|4)``
arrays so they can be chained in a :class:`sklearn.pipeline.Pipeline`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import TooFewPoints
from .geometry import PointCloud
from .validation import as_cloud, check_points, cloud_like


@dataclass(frozen=True)
class PreprocessConfig:
    min_range: float = 1.0
    max_range: float = 80.0
    voxel_leaf: float = 0.3
    sor_k: int = 16
    sor_stddev_mult: float = 1.5
    anomaly_ratio: float = 0.5
    min_points: int = 6000

    def __post_init__(self):
        if not 0 <= self.min_range < self.max_range:
            raise ValueError("need 0 <= min_range < max_range")
        if self.voxel_leaf <= 0:
            raise ValueError("voxel_leaf must be positive")
        if self.sor_k < 1:
            raise ValueError("sor_k must be >= 1")
        if not 0 < self.anomaly_ratio <= 1:
            raise ValueError("anomaly_ratio must lie in (0, 1]")
        if self.min_points < 0:
            raise ValueError("min_points must be >= 0")


def crop_range(cloud: PointCloud, cfg: PreprocessConfig = PreprocessConfig()) -> PointCloud:
    """Keep points whose distance to the sensor lies in [min_range, max_range]."""
    r = np.linalg.norm(cloud.xyz, axis=1)
    return cloud.subset((r >= cfg.min_range) & (r <= cfg.max_range))


def voxel_keys(xyz: np.ndarray, leaf: float) -> np.ndarray:
    return np.floor(xyz / leaf).astype(np.int64)


def voxel_downsample(cloud: PointCloud, leaf: float) -> PointCloud:
    """Replace the points of every occupied voxel by their centroid.

    Cells are ``floor(p / leaf)``, so a point on a cell boundary belongs to
    the higher-index cell. Output is ordered by voxel key.
    """
    if not leaf > 0:
        raise ValueError("leaf must be positive")
    if len(cloud) == 0:
        return cloud
    _, inverse, counts = np.unique(
        voxel_keys(cloud.xyz, leaf), axis=0, return_inverse=True, return_counts=True
    )
    inverse = inverse.reshape(-1)
    n = len(counts)
    xyz = np.column_stack(
        [np.bincount(inverse, weights=cloud.xyz[:, i], minlength=n) for i in range(3)]
    ) / counts[:, None]
    intensity = np.bincount(inverse, weights=cloud.intensity, minlength=n) / counts
    return PointCloud(xyz, np.clip(intensity, 0.0, 1.0), cloud.stamp, cloud.frame_id)


def mean_neighbor_distances(xyz: np.ndarray, k: int) -> np.ndarray:
    """Mean distance from each point to its ``k`` nearest other points."""
    dist, _ = cKDTree(xyz).query(xyz, k=k + 1)
    return dist[:, 1:].mean(axis=1)


def outlier_mask(cloud: PointCloud, k: int = 16, stddev_mult: float = 1.5) -> np.ndarray:
    """Boolean mask of the points kept by statistical outlier removal."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(cloud) <= k:
        raise TooFewPoints(f"statistical outlier removal with k={k} needs more than {k} points, got {len(cloud)}")
    d = mean_neighbor_distances(cloud.xyz, k)
    mean = d.mean()
    std = d.std(ddof=1) if len(d) > 1 else 0.0
    # slack absorbs rounding noise when every neighbourhood is identical
    threshold = mean + stddev_mult * std + 1e-12 * max(mean, 1.0)
    return d <= threshold


def remove_statistical_outliers(cloud: PointCloud, k: int = 16, stddev_mult: float = 1.5) -> PointCloud:
    return cloud.subset(outlier_mask(cloud, k, stddev_mult))


def anomaly_gate(previous_count: int, current_count: int, ratio: float = 0.5) -> bool:
    """True when the current scan is accepted.

    The very first scan (``previous_count == 0``) is always accepted; after
    that a scan is rejected when the smaller of the two counts is less than
    ``ratio`` times the larger.
    """
    if not 0 < ratio <= 1:
        raise ValueError("ratio must lie in (0, 1]")
    if previous_count <= 0:
        return True
    hi = max(previous_count, current_count)
    return min(previous_count, current_count) / hi >= ratio


def condition_scan(cloud: PointCloud, cfg: PreprocessConfig = PreprocessConfig()):
    """Crop and outlier-filter a raw scan.

    Returns the conditioned cloud and the fraction of cropped points removed
    by the outlier filter.
    """
    cropped = crop_range(cloud, cfg)
    if len(cropped) <= cfg.sor_k:
        return cropped, 0.0
    kept = remove_statistical_outliers(cropped, cfg.sor_k, cfg.sor_stddev_mult)
    return kept, 1.0 - len(kept) / len(cropped)


# --- scikit-learn transformers ----------------------------------------------

class RangeCropper(TransformerMixin, BaseEstimator):
    """Drop points outside a spherical shell around the sensor."""

    def __init__(self, min_range=1.0, max_range=80.0):
        self.min_range = min_range
        self.max_range = max_range

    def fit(self, X, y=None):
        X = check_points(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        cfg = PreprocessConfig(min_range=self.min_range, max_range=self.max_range)
        return cloud_like(X, crop_range(as_cloud(X), cfg))


class VoxelDownsampler(TransformerMixin, BaseEstimator):
    def __init__(self, leaf=0.3):
        self.leaf = leaf

    def fit(self, X, y=None):
        X = check_points(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        return cloud_like(X, voxel_downsample(as_cloud(X), self.leaf))


class StatisticalOutlierRemover(TransformerMixin, BaseEstimator):
    """Statistical outlier removal as a transformer.

    ``transform`` filters the cloud it is given; ``removed_fraction_`` holds
    the fraction dropped by the last call, which is what the operating
    envelope checks look at.
    """

    def __init__(self, k=16, stddev_mult=1.5):
        self.k = k
        self.stddev_mult = stddev_mult

    def fit(self, X, y=None):
        X = check_points(X, min_points=self.k + 1)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        cloud = as_cloud(X)
        mask = outlier_mask(cloud, self.k, self.stddev_mult)
        self.removed_fraction_ = 1.0 - mask.mean()
        return cloud_like(X, cloud.subset(mask))
