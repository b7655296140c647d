"""Input validation helpers shared by the estimator wrappers."""

import numpy as np
from sklearn.utils.validation import check_array

from .geometry import PointCloud


def check_points(X, min_points=0, name="X"):
    """Return ``X`` as a finite float array of shape (N, 3) or (N, 4)."""
    if isinstance(X, PointCloud):
        X = X.to_array()
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] not in (3, 4):
        raise ValueError(f"{name} must be an (N, 3) or (N, 4) array, got shape {X.shape}")
    if len(X):
        X = check_array(X, dtype=np.float64, ensure_all_finite=True, input_name=name)
    if len(X) < min_points:
        raise ValueError(f"{name} needs at least {min_points} points, got {len(X)}")
    return X


def as_cloud(X, stamp=0.0):
    """Wrap an array (or pass through a cloud) as a :class:`PointCloud`."""
    if isinstance(X, PointCloud):
        return X
    return PointCloud.from_array(check_points(X), stamp=stamp)


def cloud_like(X, cloud: PointCloud):
    """Return ``cloud`` in the container type of ``X`` (array or cloud)."""
    if isinstance(X, PointCloud):
        return cloud
    return cloud.to_array() if np.shape(X)[1] == 4 else cloud.xyz.copy()


def check_positive(value, name, strict=True):
    if not np.isfinite(value) or (value <= 0 if strict else value < 0):
        raise ValueError(f"{name} must be {'positive' if strict else 'non-negative'}, got {value}")
    return value
