"""Neighbour search, surface normals and FPFH descriptors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .exceptions import EmptyCloud
from .geometry import PointCloud

N_BINS = 11
DESCRIPTOR_SIZE = 3 * N_BINS
_EXTRA_CANDIDATES = 8


class NeighborIndex:
    """k-d tree over a cloud whose answers match an exhaustive scan exactly.

    Distances are recomputed in numpy for every candidate and ties are broken
    by the lower point index, so results do not depend on the tree layout.
    """

    def __init__(self, cloud):
        xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
        if len(xyz) == 0:
            raise EmptyCloud("cannot index an empty cloud")
        self.xyz = xyz
        self.tree = cKDTree(xyz)

    def __len__(self):
        return len(self.xyz)

    def _sorted(self, queries, idx):
        d = np.sqrt(((queries[:, None, :] - self.xyz[idx]) ** 2).sum(axis=-1))
        order = np.lexsort((idx, d), axis=-1)
        return np.take_along_axis(d, order, axis=-1), np.take_along_axis(idx, order, axis=-1)

    def knn(self, queries, k: int):
        """Distances and indices of the ``k`` nearest points, shape (M, k)."""
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        n = len(self.xyz)
        k = min(int(k), n)
        if k < 1:
            raise ValueError("k must be >= 1")
        kq = min(n, k + _EXTRA_CANDIDATES)
        _, idx = self.tree.query(queries, k=kq)
        idx = np.asarray(idx).reshape(len(queries), kq)
        d, idx = self._sorted(queries, idx)
        if kq < n:
            # the farthest retrieved candidate ties the k-th: more tied points may exist
            suspect = np.nonzero(d[:, -1] <= d[:, k - 1] * (1 + 1e-12) + 1e-300)[0]
            for row in suspect:
                cand = np.array(
                    self.tree.query_ball_point(queries[row], d[row, k - 1] * (1 + 1e-9) + 1e-12), dtype=np.int64
                )
                cd, ci = self._sorted(queries[row : row + 1], cand[None, :])
                d[row] = np.concatenate([cd[0, :kq], np.full(max(0, kq - cd.shape[1]), np.inf)])[:kq]
                idx[row] = np.concatenate([ci[0, :kq], np.full(max(0, kq - ci.shape[1]), -1)])[:kq]
        return d[:, :k], idx[:, :k]

    def radius(self, query, r: float):
        """Indices and distances of points within ``r`` of one query, nearest first."""
        query = np.asarray(query, dtype=float).reshape(3)
        cand = np.array(self.tree.query_ball_point(query, r * (1 + 1e-9) + 1e-12), dtype=np.int64)
        if len(cand) == 0:
            return np.empty(0, dtype=np.int64), np.empty(0)
        d, idx = self._sorted(query[None, :], cand[None, :])
        keep = d[0] <= r
        return idx[0][keep], d[0][keep]

    def radius_pairs(self, r: float):
        """All ordered pairs ``(i, j)``, ``i != j``, within distance ``r``.

        Returned as flat index arrays sorted by ``i`` then ``j``, with the
        pair distances.
        """
        pairs = self.tree.query_pairs(r * (1 + 1e-9) + 1e-12, output_type="ndarray")
        if len(pairs) == 0:
            e = np.empty(0, dtype=np.int64)
            return e, e, np.empty(0)
        i = np.concatenate([pairs[:, 0], pairs[:, 1]])
        j = np.concatenate([pairs[:, 1], pairs[:, 0]])
        d = np.sqrt(((self.xyz[i] - self.xyz[j]) ** 2).sum(axis=1))
        keep = d <= r
        i, j, d = i[keep], j[keep], d[keep]
        order = np.lexsort((j, i))
        return i[order], j[order], d[order]


def build_neighbor_index(cloud) -> NeighborIndex:
    return NeighborIndex(cloud)


@dataclass(frozen=True, eq=False)
class NormalCloud:
    normals: np.ndarray  # (N, 3), zero rows where invalid
    curvature: np.ndarray  # (N,), in [0, 1/3]
    valid: np.ndarray  # (N,) bool

    def __len__(self):
        return len(self.valid)


def estimate_normals(cloud: PointCloud, index: NeighborIndex = None, k: int = 16, viewpoint=(0.0, 0.0, 0.0)) -> NormalCloud:
    """PCA normals from the k-neighbourhood of every point.

    The normal is the eigenvector of the neighbourhood covariance with the
    smallest eigenvalue, oriented towards ``viewpoint``. A point is invalid
    when its two smallest eigenvalues are both below 1e-12 (fewer than three
    distinct or only collinear neighbours).
    """
    if k < 3:
        raise ValueError("k must be >= 3")
    n = len(cloud)
    if n == 0:
        return NormalCloud(np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=bool))
    if index is None:
        index = NeighborIndex(cloud)
    _, idx = index.knn(cloud.xyz, k)
    nb = cloud.xyz[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / idx.shape[1]
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    normals = evecs[:, :, 0].copy()
    vp = np.asarray(viewpoint, dtype=float)[:3]
    flip = np.einsum("ij,ij->i", normals, vp - cloud.xyz) < 0
    normals[flip] *= -1
    valid = ~((evals[:, 0] < 1e-12) & (evals[:, 1] < 1e-12))
    if idx.shape[1] < 3:
        valid[:] = False
    total = evals.sum(axis=1)
    curvature = np.divide(evals[:, 0], total, out=np.zeros(n), where=total > 0)
    normals[~valid] = 0.0
    curvature = np.clip(curvature, 0.0, 1.0 / 3.0)
    return NormalCloud(normals, curvature, valid)


@dataclass(frozen=True, eq=False)
class FpfhFeatures:
    """FPFH histograms, one 33-bin row per point, blocks ordered (alpha, phi, theta)."""

    histograms: np.ndarray  # (N, 33)
    usable: np.ndarray  # (N,) bool

    def __len__(self):
        return len(self.usable)


def pair_features(ps, ns, pt, nt):
    """Darboux-frame angles (alpha, phi, theta) for arrays of point pairs.

    For each pair the source is the point whose normal makes the smaller
    angle with the connecting line. Pairs whose frame is undefined (line
    parallel to the source normal, or coincident points) are reported in
    the returned ``ok`` mask as False.
    """
    d = pt - ps
    dist = np.linalg.norm(d, axis=1)
    safe = np.where(dist > 0, dist, 1.0)
    dn = d / safe[:, None]
    a1 = np.einsum("ij,ij->i", ns, dn)
    a2 = np.einsum("ij,ij->i", nt, dn)
    swap = np.abs(a1) < np.abs(a2)
    u = np.where(swap[:, None], nt, ns)
    n_t = np.where(swap[:, None], ns, nt)
    dn = np.where(swap[:, None], -dn, dn)
    phi = np.einsum("ij,ij->i", u, dn)
    v = np.cross(u, dn)
    vnorm = np.linalg.norm(v, axis=1)
    ok = (dist > 0) & (vnorm > 1e-12)
    v = v / np.where(ok, vnorm, 1.0)[:, None]
    w = np.cross(u, v)
    alpha = np.einsum("ij,ij->i", v, n_t)
    theta = np.arctan2(np.einsum("ij,ij->i", w, n_t), np.einsum("ij,ij->i", u, n_t))
    return alpha, phi, theta, ok


def _bin(values, lo, hi):
    b = np.floor((values - lo) / (hi - lo) * N_BINS).astype(np.int64)
    return np.clip(b, 0, N_BINS - 1)


def _histograms(owner, alpha, phi, theta, n):
    counts = np.bincount(owner, minlength=n).astype(float)
    hist = np.zeros((n, DESCRIPTOR_SIZE))
    incr = np.divide(100.0, counts, out=np.zeros(n), where=counts > 0)[owner]
    for block, (vals, lo, hi) in enumerate(((alpha, -1.0, 1.0), (phi, -1.0, 1.0), (theta, -math.pi, math.pi))):
        flat = owner * DESCRIPTOR_SIZE + block * N_BINS + _bin(vals, lo, hi)
        hist += np.bincount(flat, weights=incr, minlength=n * DESCRIPTOR_SIZE).reshape(n, DESCRIPTOR_SIZE)
    return hist, counts > 0


def compute_fpfh(cloud: PointCloud, normals: NormalCloud, index: NeighborIndex = None, radius: float = 1.0) -> FpfhFeatures:
    """Fast Point Feature Histograms over a radius neighbourhood.

    ``FPFH(p) = SPFH(p) + 1/k * sum_i SPFH(p_i) / d_i`` over the ``k``
    neighbours with usable SPFH, then each 11-bin block is rescaled to sum
    to 100. Points without a valid-normal neighbour get a zero row and are
    marked unusable.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    n = len(cloud)
    if len(normals) != n:
        raise ValueError("normals were computed on a different cloud")
    if n == 0:
        return FpfhFeatures(np.zeros((0, DESCRIPTOR_SIZE)), np.zeros(0, dtype=bool))
    if index is None:
        index = NeighborIndex(cloud)
    i, j, dij = index.radius_pairs(radius)
    valid = normals.valid
    keep = valid[i] & valid[j]
    i, j, dij = i[keep], j[keep], dij[keep]

    xyz, nrm = cloud.xyz, normals.normals
    alpha, phi, theta, ok = pair_features(xyz[i], nrm[i], xyz[j], nrm[j])
    spfh, has_spfh = _histograms(i[ok], alpha[ok], phi[ok], theta[ok], n)

    # neighbour weighting, invalid-normal neighbours already excluded above
    contrib = has_spfh[j]
    ci, cj, cd = i[contrib], j[contrib], np.maximum(dij[contrib], 1e-6)
    k = np.bincount(ci, minlength=n).astype(float)
    weighted = sparse.csr_matrix((1.0 / cd, (ci, cj)), shape=(n, n)) @ spfh
    fpfh = spfh + np.divide(weighted, k[:, None], out=np.zeros_like(weighted), where=k[:, None] > 0)

    usable = has_spfh & valid
    fpfh[~usable] = 0.0
    blocks = fpfh.reshape(n, 3, N_BINS)
    sums = blocks.sum(axis=2, keepdims=True)
    blocks = np.divide(blocks * 100.0, sums, out=np.zeros_like(blocks), where=sums > 0)
    return FpfhFeatures(blocks.reshape(n, DESCRIPTOR_SIZE), usable)
