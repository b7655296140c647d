"""Full 6-DoF scan registration: FPFH matching, consensus pre-alignment and ICP.

All transforms returned here map points of scan ``a`` into the frame of
scan ``b`` (``b ~ T @ a``). The vehicle ego-motion between the two scans
is the inverse of that transform.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import (
    AnomalousScan,
    BelowMinPoints,
    DegenerateGeometry,
    NoConsensus,
    NoOverlap,
    NoUsableDescriptors,
    TooFewCorrespondences,
)
from .features import FpfhFeatures, NeighborIndex, compute_fpfh, estimate_normals
from .geometry import PointCloud, PosedTransform, RigidTransform, estimate_rigid_transform, project_planar
from .preprocess import PreprocessConfig, anomaly_gate, condition_scan, voxel_downsample
from .validation import as_cloud, check_points


@dataclass(frozen=True)
class FeatureConfig:
    normal_k: int = 16
    fpfh_radius: float = 1.0

    def __post_init__(self):
        if self.normal_k < 3:
            raise ValueError("normal_k must be >= 3")
        if not self.fpfh_radius > 0:
            raise ValueError("fpfh_radius must be positive")


@dataclass(frozen=True)
class RegistrationConfig:
    """Knobs of the full registration chain.

    ``prealign`` selects the coarse stage: ``"sac_ia"`` (sample consensus
    over nearest-feature candidates) or ``"ransac"`` (consensus over the
    one-to-one feature matches).
    """

    use_initial_alignment: bool = True
    use_fine_alignment: bool = True
    icp_max_iterations: int = 50
    icp_translation_eps: float = 1e-4
    icp_rotation_eps: float = 1e-4
    icp_max_corr_distance: float = 2.0
    icp_max_source_points: int = 4000
    ransac_iterations: int = 512
    ransac_inlier_threshold: float = 0.25
    constrain_planar_guess: bool = True
    prealign: str = "sac_ia"
    mutual_matching: bool = False
    sac_candidates: int = 4
    sac_min_sample_distance: float = 1.0
    sac_edge_similarity: float = 0.9
    sac_score_points: int = 400
    sac_score_truncation: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.icp_max_iterations < 1:
            raise ValueError("icp_max_iterations must be >= 1")
        for name in ("icp_translation_eps", "icp_rotation_eps", "icp_max_corr_distance",
                     "ransac_inlier_threshold", "sac_score_truncation"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.ransac_iterations < 1 or self.sac_candidates < 1 or self.icp_max_source_points < 3:
            raise ValueError("iteration and sample counts must be positive")
        if self.prealign not in ("sac_ia", "ransac"):
            raise ValueError("prealign must be 'sac_ia' or 'ransac'")
        if not 0 < self.sac_edge_similarity <= 1:
            raise ValueError("sac_edge_similarity must lie in (0, 1]")


class Correspondence(NamedTuple):
    source_index: int
    target_index: int
    feature_distance: float


@dataclass(frozen=True, eq=False)
class Correspondences:
    """Columnar set of correspondences; iterates as :class:`Correspondence`."""

    source: np.ndarray
    target: np.ndarray
    distance: np.ndarray

    def __post_init__(self):
        if not len(self.source) == len(self.target) == len(self.distance):
            raise ValueError("correspondence columns differ in length")

    @classmethod
    def from_pairs(cls, items):
        items = list(items)
        if not items:
            return cls(np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))
        s, t, *d = zip(*items)
        dist = np.asarray(d[0], dtype=float) if d else np.zeros(len(s))
        return cls(np.asarray(s, dtype=np.int64), np.asarray(t, dtype=np.int64), dist)

    def __len__(self):
        return len(self.source)

    def __iter__(self):
        for s, t, d in zip(self.source, self.target, self.distance):
            yield Correspondence(int(s), int(t), float(d))

    def __getitem__(self, index):
        if isinstance(index, (int, np.integer)):
            return Correspondence(int(self.source[index]), int(self.target[index]), float(self.distance[index]))
        return Correspondences(self.source[index], self.target[index], self.distance[index])


@dataclass(frozen=True)
class RegistrationResult:
    motion: PosedTransform
    stage_reached: str  # "prealigned" | "refined"
    points_used: tuple
    rejected_fraction: float
    icp_iterations: int = 0
    error_history: tuple = ()
    timings: dict = field(default_factory=dict)
    removed_fraction: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not 0.0 <= self.rejected_fraction <= 1.0:
            raise ValueError("rejected_fraction must lie in [0, 1]")

    @property
    def transform(self) -> RigidTransform:
        return self.motion.transform


# --- feature matching --------------------------------------------------------

def _descriptor_rows(desc):
    if isinstance(desc, FpfhFeatures):
        return np.asarray(desc.histograms, dtype=float), np.asarray(desc.usable, dtype=bool)
    arr = np.atleast_2d(np.asarray(desc, dtype=float))
    return arr, np.ones(len(arr), dtype=bool)


def nearest_descriptors(queries: np.ndarray, targets: np.ndarray, k: int = 1, chunk: int = 1024):
    """Exact ``k`` nearest rows of ``targets`` for every query row.

    Candidates come from the Gram-matrix expansion of squared distances;
    every candidate that could rank in the top ``k`` is re-measured exactly
    so the result equals an exhaustive scan with ties going to the lower
    target index.
    """
    queries = np.asarray(queries, dtype=float)
    targets = np.asarray(targets, dtype=float)
    k = min(k, len(targets))
    tt = np.einsum("ij,ij->i", targets, targets)
    tt_max = float(tt.max()) if len(tt) else 0.0
    out_d = np.empty((len(queries), k))
    out_i = np.empty((len(queries), k), dtype=np.int64)
    for lo in range(0, len(queries), chunk):
        q = queries[lo:lo + chunk]
        qq = np.einsum("ij,ij->i", q, q)
        # squared distance minus the per-row constant |q|^2
        approx = q @ targets.T
        approx *= -2.0
        approx += tt
        kth = approx.min(axis=1) if k == 1 else np.partition(approx, k - 1, axis=1)[:, k - 1]
        slack = 1e-9 * (qq + tt_max) + 1e-12
        rows, cols = np.nonzero(approx <= (kth + slack)[:, None])
        exact = np.sqrt(((q[rows] - targets[cols]) ** 2).sum(axis=1))
        order = np.lexsort((cols, exact, rows))
        rows, cols, exact = rows[order], cols[order], exact[order]
        starts = np.searchsorted(rows, np.arange(len(q)))
        take = starts[:, None] + np.arange(k)[None, :]
        out_d[lo:lo + chunk] = exact[take]
        out_i[lo:lo + chunk] = cols[take]
    return out_d, out_i


def feature_candidates(desc_a, desc_b, k: int = 1):
    """Usable source indices with their ``k`` nearest usable target descriptors.

    Returns ``(source_index, target_index, distance)`` with the last two of
    shape (M, k).
    """
    ha, ua = _descriptor_rows(desc_a)
    hb, ub = _descriptor_rows(desc_b)
    ia, ib = np.nonzero(ua)[0], np.nonzero(ub)[0]
    if len(ia) == 0 or len(ib) == 0:
        raise NoUsableDescriptors("no usable descriptors on one side")
    d, j = nearest_descriptors(ha[ia], hb[ib], k)
    return ia, ib[j], d


def match_features(desc_a, desc_b, mutual: bool = False, candidates=None) -> Correspondences:
    """Nearest target descriptor (Euclidean, 33-D) for every usable source descriptor.

    With ``mutual`` a pair is kept only when the source is also the nearest
    usable source of its target. ``candidates`` may pass a precomputed
    result of :func:`feature_candidates` to avoid a second search.
    """
    ia, tj, d = feature_candidates(desc_a, desc_b, 1) if candidates is None else candidates
    src, tgt, dist = ia, tj[:, 0], d[:, 0]
    if mutual:
        ha, _ = _descriptor_rows(desc_a)
        hb, _ = _descriptor_rows(desc_b)
        uniq, inverse = np.unique(tgt, return_inverse=True)
        _, back = nearest_descriptors(hb[uniq], ha[ia], 1)
        keep = ia[back[inverse, 0]] == src
        src, tgt, dist = src[keep], tgt[keep], dist[keep]
    return Correspondences(src, tgt, dist)


# --- consensus stages --------------------------------------------------------

def _xyz(cloud):
    if isinstance(cloud, PointCloud):
        return cloud.xyz
    return np.asarray(cloud, dtype=float)[:, :3]


def _planar_if(t: RigidTransform, planar: bool) -> RigidTransform:
    return project_planar(t) if planar else t


def _fit(src, tgt, planar):
    """Least-squares transform, projected to (yaw, x, y) when ``planar``."""
    t = estimate_rigid_transform(src, tgt)
    if not planar:
        return t
    # re-solve the translation for the projected rotation
    p = project_planar(t)
    shift = (tgt - p.apply(src)).mean(axis=0)
    return RigidTransform(p.rotation, p.translation + np.array([shift[0], shift[1], 0.0]))


def reject_correspondences_ransac(corr, cloud_a, cloud_b, cfg: RegistrationConfig = RegistrationConfig(),
                                  rng=None, planar: bool = False) -> Correspondences:
    """Largest geometrically consistent subset of ``corr``.

    Each iteration fits a rigid transform to three random correspondences
    and counts the correspondences within ``ransac_inlier_threshold`` of
    it. The winning consensus is re-fitted once and its inliers recounted.
    """
    corr = corr if isinstance(corr, Correspondences) else Correspondences.from_pairs(corr)
    if len(corr) < 3:
        raise TooFewCorrespondences(f"need >= 3 correspondences, got {len(corr)}")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    a = _xyz(cloud_a)[corr.source]
    b = _xyz(cloud_b)[corr.target]
    thr2 = cfg.ransac_inlier_threshold ** 2
    n = len(corr)
    best = np.zeros(n, dtype=bool)
    for _ in range(cfg.ransac_iterations):
        sample = rng.choice(n, 3, replace=False)
        try:
            t = _fit(a[sample], b[sample], planar)
        except DegenerateGeometry:
            continue
        r = t.apply(a) - b
        inl = np.einsum("ij,ij->i", r, r) <= thr2
        if inl.sum() > best.sum():
            best = inl
    if best.sum() < 3:
        raise NoConsensus(f"best consensus has {int(best.sum())} correspondences")
    try:
        t = _fit(a[best], b[best], planar)
        r = t.apply(a) - b
        refit = np.einsum("ij,ij->i", r, r) <= thr2
        if refit.sum() >= best.sum():
            best = refit
    except DegenerateGeometry:
        pass
    return corr[np.nonzero(best)[0]]


def _score_subset(n: int, m: int, rng) -> np.ndarray:
    return np.sort(rng.choice(n, m, replace=False)) if n > m else np.arange(n)


def initial_align(cloud_a, cloud_b, desc_a, desc_b, cfg: RegistrationConfig = RegistrationConfig(),
                  index_b: NeighborIndex = None, candidates=None) -> RigidTransform:
    """Sample-consensus initial alignment over FPFH candidates.

    Every hypothesis pairs three well-separated source points with random
    members of their ``sac_candidates`` nearest-feature sets, is rejected
    early when the two triangles' edge lengths disagree, and is scored by
    the truncated squared nearest-neighbour residual of a fixed source
    subsample. The best hypothesis is refined on its inlier candidates.
    """
    xa, xb = _xyz(cloud_a), _xyz(cloud_b)
    if candidates is None:
        candidates = feature_candidates(desc_a, desc_b, cfg.sac_candidates)
    ia, cand, _ = candidates
    if len(ia) < 3 or len(np.unique(cand)) < 3:
        raise NoUsableDescriptors("need at least three usable descriptors per cloud")
    rng = np.random.default_rng(cfg.seed)
    index_b = NeighborIndex(xb) if index_b is None else index_b
    probe = xa[_score_subset(len(xa), cfg.sac_score_points, rng)]
    trunc2 = cfg.sac_score_truncation ** 2
    planar = cfg.constrain_planar_guess
    min_d2 = cfg.sac_min_sample_distance ** 2

    def score(t):
        d, _ = index_b.tree.query(t.apply(probe), k=1, distance_upper_bound=cfg.sac_score_truncation)
        return float(np.minimum(d * d, trunc2).mean())

    best_t, best_s = RigidTransform.identity(), score(RigidTransform.identity())
    for _ in range(cfg.ransac_iterations):
        pick = rng.choice(len(ia), 3, replace=False)
        pa = xa[ia[pick]]
        ea = np.array([np.sum((pa[0] - pa[1]) ** 2), np.sum((pa[1] - pa[2]) ** 2), np.sum((pa[0] - pa[2]) ** 2)])
        if ea.min() < min_d2:
            continue
        tb = cand[pick, rng.integers(0, cand.shape[1], 3)]
        pb = xb[tb]
        eb = np.array([np.sum((pb[0] - pb[1]) ** 2), np.sum((pb[1] - pb[2]) ** 2), np.sum((pb[0] - pb[2]) ** 2)])
        ratio = np.sqrt(np.minimum(ea, eb) / np.maximum(np.maximum(ea, eb), 1e-300))
        if ratio.min() < cfg.sac_edge_similarity:
            continue
        try:
            t = _fit(pa, pb, planar)
        except DegenerateGeometry:
            continue
        s = score(t)
        if s < best_s:
            best_t, best_s = t, s

    # refine on candidate correspondences consistent with the best hypothesis
    src = np.repeat(ia, cand.shape[1])
    tgt = cand.ravel()
    thr2 = cfg.ransac_inlier_threshold ** 2
    for _ in range(3):
        r = best_t.apply(xa[src]) - xb[tgt]
        inl = np.einsum("ij,ij->i", r, r) <= thr2
        if inl.sum() < 3:
            break
        try:
            t = _fit(xa[src[inl]], xb[tgt[inl]], planar)
        except DegenerateGeometry:
            break
        s = score(t)
        if s > best_s:
            break
        best_t, best_s = t, s
    return best_t


# --- fine alignment ----------------------------------------------------------

@dataclass(frozen=True)
class IcpOutcome:
    transform: RigidTransform
    fitness: float
    iterations: int
    error_history: tuple
    inlier_count: int


def icp(cloud_a, cloud_b, initial: RigidTransform = None, cfg: RegistrationConfig = RegistrationConfig(),
        index_b: NeighborIndex = None) -> IcpOutcome:
    """Point-to-point ICP of ``cloud_a`` onto ``cloud_b``.

    Each iteration pairs every source point with its nearest target within
    ``icp_max_corr_distance`` and re-solves the rigid transform in closed
    form. A step is accepted only if the mean squared pairing error does
    not grow, so ``error_history`` is non-increasing; iteration stops when
    a step is rejected, when the increment falls below both eps values, or
    after ``icp_max_iterations``.

    Raises
    ------
    NoOverlap
        No source point has a partner within the correspondence distance.
    """
    xa, xb = _xyz(cloud_a), _xyz(cloud_b)
    if len(xa) < 3 or len(xb) < 3:
        raise BelowMinPoints(min(len(xa), len(xb)), 3)
    if len(xa) > cfg.icp_max_source_points:
        # deterministic stride keeps the sample spread over the whole sweep
        xa = xa[np.linspace(0, len(xa) - 1, cfg.icp_max_source_points).round().astype(np.int64)]
    index_b = NeighborIndex(xb) if index_b is None else index_b
    maxd = cfg.icp_max_corr_distance

    def pairing(t):
        moved = t.apply(xa)
        d, j = index_b.tree.query(moved, k=1, distance_upper_bound=maxd)
        ok = np.isfinite(d)
        return moved, d, j, ok

    t = RigidTransform.identity() if initial is None else initial
    moved, d, j, ok = pairing(t)
    if not ok.any():
        raise NoOverlap(f"no correspondences within {maxd} m")
    err = float(np.mean(d[ok] ** 2))
    history = [err]
    iterations = 0
    for _ in range(cfg.icp_max_iterations):
        if ok.sum() < 3:
            break
        try:
            step = estimate_rigid_transform(moved[ok], xb[j[ok]])
        except DegenerateGeometry:
            break
        cand = step @ t
        c_moved, c_d, c_j, c_ok = pairing(cand)
        if not c_ok.any():
            break
        c_err = float(np.mean(c_d[c_ok] ** 2))
        if c_err > err:
            break
        t, moved, d, j, ok, err = cand, c_moved, c_d, c_j, c_ok, c_err
        history.append(err)
        iterations += 1
        if np.linalg.norm(step.translation) < cfg.icp_translation_eps and step.rotation_angle() < cfg.icp_rotation_eps:
            break
    return IcpOutcome(t, err, iterations, tuple(history), int(ok.sum()))


# --- full chain --------------------------------------------------------------

def describe(cloud: PointCloud, pre_cfg: PreprocessConfig, feat_cfg: FeatureConfig):
    """Voxelized copy of a conditioned cloud with its FPFH descriptors."""
    vox = voxel_downsample(cloud, pre_cfg.voxel_leaf)
    if len(vox) < 3:
        raise NoUsableDescriptors("too few voxels to describe")
    index = NeighborIndex(vox)
    normals = estimate_normals(vox, index, feat_cfg.normal_k)
    return vox, compute_fpfh(vox, normals, index, feat_cfg.fpfh_radius)


def register_scans(scan_a: PointCloud, scan_b: PointCloud, pre_cfg: PreprocessConfig = PreprocessConfig(),
                   reg_cfg: RegistrationConfig = RegistrationConfig(), feat_cfg: FeatureConfig = FeatureConfig(),
                   initial: RigidTransform = None) -> RegistrationResult:
    """Register ``scan_b`` against ``scan_a``: crop, outlier filter, features, pre-align, ICP.

    The returned motion maps points of ``a`` into the frame of ``b``.
    ``initial`` replaces the planar identity guess used when pre-alignment
    is disabled.

    Raises
    ------
    AnomalousScan
        Raw point counts differ by more than ``anomaly_ratio``.
    BelowMinPoints
        Either conditioned cloud is smaller than ``min_points``.
    """
    timings = {}
    t0 = time.perf_counter()
    if not anomaly_gate(len(scan_a), len(scan_b), pre_cfg.anomaly_ratio):
        raise AnomalousScan(len(scan_a), len(scan_b))
    a, frac_a = condition_scan(scan_a, pre_cfg)
    b, frac_b = condition_scan(scan_b, pre_cfg)
    for c in (a, b):
        if len(c) < max(pre_cfg.min_points, 3):
            raise BelowMinPoints(len(c), pre_cfg.min_points)
    index_b = NeighborIndex(b)
    timings["preprocess"] = time.perf_counter() - t0

    guess = project_planar(initial) if initial is not None else RigidTransform.identity()
    rejected = 0.0
    stage = "prealigned"
    if reg_cfg.use_initial_alignment:
        t1 = time.perf_counter()
        va, fa = describe(a, pre_cfg, feat_cfg)
        vb, fb = describe(b, pre_cfg, feat_cfg)
        t2 = time.perf_counter()
        timings["features"] = t2 - t1
        cands = feature_candidates(fa, fb, reg_cfg.sac_candidates)
        corr = match_features(fa, fb, reg_cfg.mutual_matching, candidates=cands)
        if reg_cfg.prealign == "sac_ia":
            guess = initial_align(va, vb, fa, fb, reg_cfg, candidates=cands)
        else:
            inliers = reject_correspondences_ransac(corr, va, vb, reg_cfg, planar=reg_cfg.constrain_planar_guess)
            guess = _fit(va.xyz[inliers.source], vb.xyz[inliers.target], reg_cfg.constrain_planar_guess)
        r = guess.apply(va.xyz[corr.source]) - vb.xyz[corr.target]
        rejected = float(np.mean(np.einsum("ij,ij->i", r, r) > reg_cfg.ransac_inlier_threshold ** 2))
        timings["prealign"] = time.perf_counter() - t2

    if reg_cfg.use_fine_alignment:
        t3 = time.perf_counter()
        out = icp(a, b, guess, reg_cfg, index_b)
        timings["icp"] = time.perf_counter() - t3
        motion = PosedTransform.from_transform(out.transform, out.fitness, out.inlier_count)
        iterations, history = out.iterations, out.error_history
        stage = "refined"
    else:
        d, _ = index_b.tree.query(guess.apply(a.xyz), k=1, distance_upper_bound=reg_cfg.icp_max_corr_distance)
        ok = np.isfinite(d)
        fitness = float(np.mean(d[ok] ** 2)) if ok.any() else math.inf
        motion = PosedTransform.from_transform(guess, fitness if math.isfinite(fitness) else 0.0, int(ok.sum()))
        iterations, history = 0, ()
    timings["total"] = time.perf_counter() - t0
    return RegistrationResult(motion, stage, (len(a), len(b)), rejected, iterations, history, timings,
                              (frac_a, frac_b))


class ScanRegistration(BaseEstimator):
    """Estimator wrapper around :func:`register_scans`.

    ``fit(X_a, X_b)`` registers ``X_b`` against ``X_a``; ``transform``
    then maps clouds from frame ``a`` into frame ``b``.

    Attributes
    ----------
    transform_ : RigidTransform
    result_ : RegistrationResult
    """

    def __init__(self, prealign="sac_ia", use_initial_alignment=True, use_fine_alignment=True,
                 icp_max_iterations=50, icp_max_corr_distance=2.0, ransac_iterations=512,
                 ransac_inlier_threshold=0.25, constrain_planar_guess=True, min_points=6000, voxel_leaf=0.3,
                 random_state=0):
        self.prealign = prealign
        self.use_initial_alignment = use_initial_alignment
        self.use_fine_alignment = use_fine_alignment
        self.icp_max_iterations = icp_max_iterations
        self.icp_max_corr_distance = icp_max_corr_distance
        self.ransac_iterations = ransac_iterations
        self.ransac_inlier_threshold = ransac_inlier_threshold
        self.constrain_planar_guess = constrain_planar_guess
        self.min_points = min_points
        self.voxel_leaf = voxel_leaf
        self.random_state = random_state

    def _configs(self):
        pre = PreprocessConfig(min_points=self.min_points, voxel_leaf=self.voxel_leaf)
        reg = RegistrationConfig(
            use_initial_alignment=self.use_initial_alignment, use_fine_alignment=self.use_fine_alignment,
            icp_max_iterations=self.icp_max_iterations, icp_max_corr_distance=self.icp_max_corr_distance,
            ransac_iterations=self.ransac_iterations, ransac_inlier_threshold=self.ransac_inlier_threshold,
            constrain_planar_guess=self.constrain_planar_guess, prealign=self.prealign,
            seed=int(self.random_state or 0),
        )
        return pre, reg

    def fit(self, X, y):
        a = as_cloud(X)
        b = as_cloud(y)
        self.n_features_in_ = check_points(X).shape[1]
        pre, reg = self._configs()
        self.result_ = register_scans(a, b, pre, reg)
        self.transform_ = self.result_.transform
        return self

    def transform(self, X):
        pts = check_points(X)
        out = pts.copy()
        out[:, :3] = self.transform_.apply(pts[:, :3])
        return out

    def score(self, X, y=None):
        """Negative fitness, so that larger is better."""
        return -self.result_.motion.fitness
