"""Planar scan matching on x-y projection images.

Both scans are flattened onto a top-down occupancy image centred on the
sensor. Image ``b`` is rotated through a sweep of candidate yaws about the
canvas centre and phase-correlated against ``a``; the strongest peak gives
yaw and the x-y translation.

Conventions: pixel column grows with x, pixel row grows with -y. Image
shifts are reported as ``(dx_px, dy_px)`` = (column, row) displacement of
``b`` relative to ``a``. A :class:`PlanarMotion` is the transform that maps
points of scan ``a`` into the frame of scan ``b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import cv2
import numpy as np
from scipy import fft as sfft
from scipy.signal import windows
from sklearn.base import BaseEstimator

from .exceptions import AnomalousScan, DimensionMismatch, LowConfidence
from .geometry import PointCloud, RigidTransform, planar_transform, yaw_of
from .preprocess import PreprocessConfig, anomaly_gate, crop_range
from .validation import as_cloud, check_points, cloud_like


@dataclass(frozen=True)
class ProjectionCanvas:
    width: int = 256
    height: int = 256
    resolution: float = 0.5
    value_mode: str = "count"
    saturation: int = 16

    def __post_init__(self):
        for side in (self.width, self.height):
            if side < 32 or side % 2:
                raise ValueError("canvas sides must be even and >= 32")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        if self.value_mode not in ("count", "max_intensity"):
            raise ValueError("value_mode must be 'count' or 'max_intensity'")
        if self.saturation < 1:
            raise ValueError("saturation must be >= 1")

    @property
    def center(self) -> tuple[int, int]:
        """(column, row) of the sensor origin."""
        return self.width // 2, self.height // 2


@dataclass(frozen=True, eq=False)
class ProjectionImage:
    data: np.ndarray  # (height, width)
    canvas: ProjectionCanvas
    point_count_used: int = 0

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class PlanarMotion:
    """Yaw (rad) and x-y translation (m) mapping scan ``a`` points into scan ``b``."""

    yaw: float = 0.0
    dx: float = 0.0
    dy: float = 0.0
    score: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [0, 1]")

    @property
    def transform(self) -> RigidTransform:
        return planar_transform(self.yaw, self.dx, self.dy)

    @classmethod
    def from_transform(cls, t: RigidTransform, score: float = 1.0) -> "PlanarMotion":
        return cls(yaw_of(t), float(t.translation[0]), float(t.translation[1]), score)

    def inverse(self) -> "PlanarMotion":
        """Same motion seen the other way round (vehicle ego-motion for an alignment)."""
        return PlanarMotion.from_transform(self.transform.inverse(), self.score)


def project_to_image(cloud: PointCloud, canvas: ProjectionCanvas = ProjectionCanvas()) -> ProjectionImage:
    """Drop z and bin points into the canvas; out-of-canvas points are discarded."""
    cx, cy = canvas.center
    col = cx + np.floor(cloud.xyz[:, 0] / canvas.resolution + 0.5).astype(np.int64)
    row = cy - np.floor(cloud.xyz[:, 1] / canvas.resolution + 0.5).astype(np.int64)
    inside = (col >= 0) & (col < canvas.width) & (row >= 0) & (row < canvas.height)
    flat = row[inside] * canvas.width + col[inside]
    size = canvas.width * canvas.height
    if canvas.value_mode == "count":
        img = np.minimum(np.bincount(flat, minlength=size), canvas.saturation).astype(float)
    else:
        img = np.zeros(size)
        np.maximum.at(img, flat, cloud.intensity[inside])
    return ProjectionImage(img.reshape(canvas.height, canvas.width), canvas, int(inside.sum()))


def _as_array(img):
    return img.data if isinstance(img, ProjectionImage) else np.asarray(img, dtype=float)


def raised_cosine(shape, taper: float = 1.0) -> np.ndarray:
    """Separable raised-cosine (Tukey) window; ``taper`` is the tapered
    fraction of each axis, 1.0 giving the Hann window."""
    return np.outer(windows.tukey(shape[0], taper), windows.tukey(shape[1], taper))


def spectral_weight(shape, bandwidth: Optional[float]):
    """Gaussian low-pass over spatial frequency (cycles/pixel) in ``rfft2``
    layout, or None when off.

    Scaled to unit mean over the full spectrum so that a perfect match still
    yields a correlation peak of 1. Suppressing the binning noise at high
    frequencies sharpens the yaw decision between neighbouring candidates.
    """
    if bandwidth is None:
        return None
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    ky = np.fft.fftfreq(shape[0])[:, None]
    full = np.exp(-(np.fft.fftfreq(shape[1])[None, :] ** 2 + ky**2) / (2 * bandwidth**2))
    kx = np.fft.rfftfreq(shape[1])[None, :]
    return (np.exp(-(kx**2 + ky**2) / (2 * bandwidth**2)) / full.mean()).astype(np.float32)


def _normalized_cross_power(fa, fb, weight=None):
    r = fb * np.conj(fa)
    mag = np.abs(r)
    scale = mag.max() if mag.size else 0.0
    if scale == 0:
        return np.zeros_like(r)
    out = np.divide(r, mag, out=np.zeros_like(r), where=mag > 1e-12 * scale)
    return out if weight is None else out * weight


def _peak(surface):
    """Integer (column, row) shift of the correlation maximum, wrapped to signed values."""
    h, w = surface.shape
    flat = int(np.argmax(surface))
    r, c = divmod(flat, w)
    peak = float(np.clip(surface[r, c], 0.0, 1.0))
    if r > h // 2:
        r -= h
    if c > w // 2:
        c -= w
    return c, r, peak


def _refine_shift(a, b, dx, dy, upsample=20):
    """Sub-pixel peak of the phase-correlation surface near the integer shift.

    The surface is evaluated on a ``1/upsample`` pixel grid within one
    pixel of ``(dx, dy)`` by a direct inverse DFT of the cross-power
    spectrum, which interpolates it exactly rather than by a model fit.
    The spectrum is not low-pass weighted here: a flattened peak biases the
    sub-pixel location towards the integer grid.
    """
    h, w = a.shape
    r = _normalized_cross_power(np.fft.fft2(a), np.fft.fft2(b))
    offsets = np.arange(-upsample, upsample + 1) / upsample
    ky = np.fft.fftfreq(h) * h
    kx = np.fft.fftfreq(w) * w
    ey = np.exp(2j * np.pi * np.outer(dy + offsets, ky) / h)
    ex = np.exp(2j * np.pi * np.outer(kx, dx + offsets) / w)
    local = (ey @ r @ ex).real
    i, j = np.unravel_index(int(np.argmax(local)), local.shape)
    return dx + offsets[j], dy + offsets[i]


def _parabolic(left, centre, right):
    denom = left - 2.0 * centre + right
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


# a peak this close to 1 means the cross-power spectrum is a pure phase ramp: the
# integer estimate is exact and interpolation could only add resampling bias
EXACT_PEAK = 1.0 - 1e-9


def phase_correlate(a, b, window: bool = False, subpixel: bool = False, taper: float = 1.0,
                    bandwidth: Optional[float] = None):
    """Translation of ``b`` relative to ``a`` by phase correlation.

    Returns ``(dx_px, dy_px, peak)`` where ``b(row, col) ~ a(row - dy_px,
    col - dx_px)`` and ``peak`` is the normalised correlation maximum in
    [0, 1]. Integer shifts unless ``subpixel`` is set. ``bandwidth`` applies
    :func:`spectral_weight` to the cross-power spectrum.
    """
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    if window:
        win = raised_cosine(a.shape, taper)
        a, b = a * win, b * win
    fa = sfft.rfft2(a)
    fb = sfft.rfft2(b)
    surface = sfft.irfft2(_normalized_cross_power(fa, fb, spectral_weight(a.shape, bandwidth)), s=a.shape)
    dx, dy, peak = _peak(surface)
    if subpixel and peak < EXACT_PEAK:
        dx, dy = _refine_shift(a, b, dx, dy)
    return dx, dy, peak


def rotate_image(img, yaw: float) -> np.ndarray:
    """Resample an image as if its scene were rotated by ``yaw`` about the canvas centre.

    Positive yaw is counter-clockwise in the x-y plane (bilinear, zero fill).
    Output is float32.
    """
    data = np.asarray(_as_array(img), dtype=np.float32)
    h, w = data.shape
    cy, cx = h // 2, w // 2
    c, s = math.cos(yaw), math.sin(yaw)
    # inverse map, (col, row) order: source = R(-yaw) applied to the output pixel
    m = np.array([[c, -s, cx - c * cx + s * cy], [s, c, cy - s * cx - c * cy]])
    return cv2.warpAffine(data, m, (w, h), flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                          borderMode=cv2.BORDER_CONSTANT, borderValue=0.0)


def _yaw_candidates(yaw_range, yaw_step):
    if not yaw_step > 0:
        raise ValueError("yaw_step must be positive")
    if yaw_range < yaw_step:
        raise ValueError("yaw_range must be >= yaw_step")
    k = int(math.floor(yaw_range / yaw_step + 1e-9))
    steps = np.arange(-k, k + 1)
    # evaluation order doubles as the deterministic tie-break: small |yaw| first
    order = np.lexsort((steps, np.abs(steps)))
    return steps[order]


def rotation_search(a, b, yaw_range: float = math.radians(10.0), yaw_step: float = math.radians(0.25),
                    resolution: Optional[float] = None, window: bool = True,
                    subpixel: bool = False, taper: float = 0.25, bandwidth: Optional[float] = 0.15) -> PlanarMotion:
    """Sweep candidate yaws, phase-correlating ``a`` against counter-rotated ``b``.

    With ``subpixel`` the yaw is refined by a parabola through the peaks of
    the neighbouring candidates and the shift by :func:`_refine_shift`.
    """
    if resolution is None:
        resolution = a.canvas.resolution if isinstance(a, ProjectionImage) else 1.0
    da = np.asarray(_as_array(a), dtype=np.float32)
    db = np.asarray(_as_array(b), dtype=np.float32)
    if da.shape != db.shape:
        raise DimensionMismatch(f"{da.shape} vs {db.shape}")
    win = raised_cosine(da.shape, taper).astype(np.float32) if window else np.float32(1.0)
    weight = spectral_weight(da.shape, bandwidth)
    fa = sfft.rfft2(da * win)
    peaks = {}
    best = None
    for step in _yaw_candidates(yaw_range, yaw_step):
        yaw = float(step * yaw_step)
        rotated = rotate_image(db, -yaw) if step != 0 else db
        surface = sfft.irfft2(_normalized_cross_power(fa, sfft.rfft2(rotated * win), weight), s=da.shape)
        dx_px, dy_px, peak = _peak(surface)
        peaks[int(step)] = peak
        if best is None or peak > best[0]:
            best = (peak, int(step), dx_px, dy_px)
    peak, step, dx_px, dy_px = best
    yaw = step * yaw_step
    if subpixel and peak < EXACT_PEAK:
        left, right = peaks.get(step - 1), peaks.get(step + 1)
        if left is not None and right is not None:
            yaw += yaw_step * _parabolic(left, peak, right)
        rotated = rotate_image(db, -yaw) if yaw != 0 else db
        dx_px, dy_px = _refine_shift(da * win, rotated * win, dx_px, dy_px)
    # shift measured on the counter-rotated image is R(-yaw) t; rotate back
    sx, sy = dx_px * resolution, -dy_px * resolution
    c, s = math.cos(yaw), math.sin(yaw)
    return PlanarMotion(yaw, c * sx - s * sy, s * sx + c * sy, peak)


@dataclass(frozen=True)
class PlanarConfig:
    canvas: ProjectionCanvas = ProjectionCanvas()
    yaw_range: float = math.radians(10.0)
    yaw_step: float = math.radians(0.25)
    min_peak: float = 0.35
    window: bool = True
    subpixel: bool = False
    # Tukey taper fraction of the window (1.0 = Hann) and cross-power low-pass, cycles/pixel
    window_taper: float = 0.25
    bandwidth: Optional[float] = 0.15

    def __post_init__(self):
        if not 0 <= self.window_taper <= 1:
            raise ValueError("window_taper must lie in [0, 1]")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive or None")
        if not 0 <= self.min_peak <= 1:
            raise ValueError("min_peak must lie in [0, 1]")


def match_planar(scan_a: PointCloud, scan_b: PointCloud, cfg: PlanarConfig = PlanarConfig(),
                 pre_cfg: PreprocessConfig = PreprocessConfig()) -> PlanarMotion:
    """Planar matching end to end: crop, gate, project, rotation search.

    Raises
    ------
    AnomalousScan
        Raw point counts differ by more than the anomaly ratio.
    LowConfidence
        Best correlation peak below ``cfg.min_peak``.
    """
    if not anomaly_gate(len(scan_a), len(scan_b), pre_cfg.anomaly_ratio):
        raise AnomalousScan(len(scan_a), len(scan_b))
    img_a = project_to_image(crop_range(scan_a, pre_cfg), cfg.canvas)
    img_b = project_to_image(crop_range(scan_b, pre_cfg), cfg.canvas)
    motion = rotation_search(img_a, img_b, cfg.yaw_range, cfg.yaw_step, cfg.canvas.resolution,
                             cfg.window, cfg.subpixel, cfg.window_taper, cfg.bandwidth)
    if motion.score < cfg.min_peak:
        raise LowConfidence(motion.score, cfg.min_peak)
    return motion


class KeyframeMatcher:
    """Planar matcher against one fixed reference scan.

    The reference image is rotated through every yaw candidate once and the
    spectra are cached, so each new scan costs one forward FFT plus one
    inverse FFT per candidate. Rotating the reference by ``+yaw`` instead of
    the new scan by ``-yaw`` yields the same motion up to resampling; the
    translation then comes out directly in the new scan's frame.
    """

    def __init__(self, scan: PointCloud, cfg: PlanarConfig = PlanarConfig(),
                 pre_cfg: PreprocessConfig = PreprocessConfig()):
        self.cfg = cfg
        self.pre_cfg = pre_cfg
        self.count = len(scan)
        image = project_to_image(crop_range(scan, pre_cfg), cfg.canvas)
        self._image = image.data.astype(np.float32)
        self._win = raised_cosine(self._image.shape, cfg.window_taper).astype(np.float32) if cfg.window else np.float32(1.0)
        self._weight = spectral_weight(self._image.shape, cfg.bandwidth)
        self.steps = _yaw_candidates(cfg.yaw_range, cfg.yaw_step)
        self._spectra = [
            sfft.rfft2(self._rotated(float(step * cfg.yaw_step)) * self._win) for step in self.steps
        ]

    def _rotated(self, yaw):
        return rotate_image(self._image, yaw) if yaw != 0 else self._image

    def match(self, scan: PointCloud) -> PlanarMotion:
        """Motion mapping reference-scan points into ``scan``'s frame.

        Raises
        ------
        AnomalousScan, LowConfidence
            As :func:`match_planar`.
        """
        cfg = self.cfg
        if not anomaly_gate(self.count, len(scan), self.pre_cfg.anomaly_ratio):
            raise AnomalousScan(self.count, len(scan))
        img_b = project_to_image(crop_range(scan, self.pre_cfg), cfg.canvas).data.astype(np.float32) * self._win
        fb = sfft.rfft2(img_b)
        peaks = {}
        best = None
        for step, fa in zip(self.steps, self._spectra):
            surface = sfft.irfft2(_normalized_cross_power(fa, fb, self._weight), s=img_b.shape)
            dx_px, dy_px, peak = _peak(surface)
            peaks[int(step)] = peak
            if best is None or peak > best[0]:
                best = (peak, int(step), dx_px, dy_px)
        peak, step, dx_px, dy_px = best
        yaw = step * cfg.yaw_step
        if cfg.subpixel and peak < EXACT_PEAK:
            left, right = peaks.get(step - 1), peaks.get(step + 1)
            if left is not None and right is not None:
                yaw += cfg.yaw_step * _parabolic(left, peak, right)
            dx_px, dy_px = _refine_shift(self._rotated(yaw) * self._win, img_b, dx_px, dy_px)
        if peak < cfg.min_peak:
            raise LowConfidence(peak, cfg.min_peak)
        res = cfg.canvas.resolution
        return PlanarMotion(yaw, dx_px * res, -dy_px * res, peak)


def write_pgm(path, image: ProjectionImage) -> None:
    """Plain (P2) PGM. Count images keep their values with maxval = saturation;
    intensity images are scaled to 0..255."""
    canvas = image.canvas
    if canvas.value_mode == "count":
        maxval = canvas.saturation
        values = np.rint(image.data).astype(np.int64)
    else:
        maxval = 255
        values = np.rint(np.clip(image.data, 0.0, 1.0) * 255).astype(np.int64)
    h, w = values.shape
    rows = "\n".join(" ".join(map(str, row)) for row in values.tolist())
    Path(path).write_text(f"P2\n{w} {h}\n{maxval}\n{rows}\n")


def read_pgm(path) -> np.ndarray:
    tokens = []
    for line in Path(path).read_text().splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    if not tokens or tokens[0] != "P2":
        raise ValueError("not a plain PGM file")
    w, h, _ = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return np.array(tokens[4:4 + w * h], dtype=np.int64).reshape(h, w)


class PlanarScanMatcher(BaseEstimator):
    """Planar matching as an estimator: ``fit(source, target)`` learns the planar motion.

    Parameters mirror :class:`ProjectionCanvas` and :class:`PlanarConfig`;
    angles are in degrees here for readability in ``get_params``.
    """

    def __init__(self, canvas_size=256, resolution=0.5, value_mode="count", saturation=16,
                 yaw_range_deg=10.0, yaw_step_deg=0.25, min_peak=0.35, window=True, subpixel=False,
                 window_taper=0.25, bandwidth=0.15, min_range=1.0, max_range=80.0, anomaly_ratio=0.5):
        self.canvas_size = canvas_size
        self.resolution = resolution
        self.value_mode = value_mode
        self.saturation = saturation
        self.yaw_range_deg = yaw_range_deg
        self.yaw_step_deg = yaw_step_deg
        self.min_peak = min_peak
        self.window = window
        self.subpixel = subpixel
        self.window_taper = window_taper
        self.bandwidth = bandwidth
        self.min_range = min_range
        self.max_range = max_range
        self.anomaly_ratio = anomaly_ratio

    def _configs(self):
        canvas = ProjectionCanvas(self.canvas_size, self.canvas_size, self.resolution,
                                  self.value_mode, self.saturation)
        cfg = PlanarConfig(canvas, math.radians(self.yaw_range_deg), math.radians(self.yaw_step_deg),
                           self.min_peak, self.window, self.subpixel, self.window_taper, self.bandwidth)
        pre = PreprocessConfig(min_range=self.min_range, max_range=self.max_range,
                               anomaly_ratio=self.anomaly_ratio)
        return cfg, pre

    def fit(self, X, y):
        """Match source scan ``X`` against target scan ``y``."""
        cfg, pre = self._configs()
        src = as_cloud(X)
        tgt = as_cloud(y)
        self.n_features_in_ = check_points(X).shape[1]
        self.motion_ = match_planar(src, tgt, cfg, pre)
        self.transform_ = self.motion_.transform
        return self

    def transform(self, X):
        cloud = as_cloud(X)
        return cloud_like(X, cloud.with_xyz(self.transform_.apply(cloud.xyz)))

    def score(self, X=None, y=None):
        return self.motion_.score
