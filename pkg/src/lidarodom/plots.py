"""Minimal SVG line charts (trajectory, yaw and drift over time)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .navfusion import wrap_angle

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd")


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    span = hi - lo
    raw = span / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    return np.arange(math.ceil(lo / step) * step, hi + step * 1e-9, step)


def line_chart(series: dict, title: str, xlabel: str, ylabel: str, width: int = 640, height: int = 420,
               equal_axes: bool = False) -> str:
    """SVG text for named ``(x, y)`` series drawn as polylines.

    Parameters
    ----------
    series : dict
        Label to a pair of equal-length sequences. Non-finite samples are skipped.
    equal_axes : bool
        Use one scale for both axes (trajectory plots).
    """
    pts = {k: (np.asarray(x, float), np.asarray(y, float)) for k, (x, y) in series.items()}
    xs = np.concatenate([x[np.isfinite(x) & np.isfinite(y)] for x, y in pts.values()] or [np.zeros(1)])
    ys = np.concatenate([y[np.isfinite(x) & np.isfinite(y)] for x, y in pts.values()] or [np.zeros(1)])
    if xs.size == 0:
        xs = ys = np.zeros(1)
    x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
    if x1 - x0 < 1e-9:
        x0, x1 = x0 - 1, x1 + 1
    if y1 - y0 < 1e-9:
        y0, y1 = y0 - 1, y1 + 1
    left, right, top, bottom = 70, 20, 40, 50
    pw, ph = width - left - right, height - top - bottom
    sx, sy = pw / (x1 - x0), ph / (y1 - y0)
    if equal_axes:
        s = min(sx, sy)
        x0 -= (pw / s - (x1 - x0)) / 2
        y0 -= (ph / s - (y1 - y0)) / 2
        x1, y1 = x0 + pw / s, y0 + ph / s
        sx = sy = s

    def px(x):
        return left + (x - x0) * sx

    def py(y):
        return top + ph - (y - y0) * sy

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{px(t):.1f}" y1="{top + ph}" x2="{px(t):.1f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px(t):.1f}" y="{top + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{left - 5}" y1="{py(t):.1f}" x2="{left}" y2="{py(t):.1f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{py(t) + 4:.1f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 15 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (label, (x, y)) in enumerate(pts.items()):
        color = COLORS[i % len(COLORS)]
        ok = np.isfinite(x) & np.isfinite(y)
        coords = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok], y[ok]))
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = top + 15 + 16 * i
        out.append(f'<line x1="{left + 10}" y1="{ly}" x2="{left + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + 35}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _xy(poses):
    return [p.x for p in poses], [p.y for p in poses]


def write_run_plots(out_dir, tracks: dict, truth: Sequence) -> list[Path]:
    """``trajectory.svg``, ``yaw.svg`` and ``drift.svg`` for named pose tracks against truth."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj = {name: _xy(p) for name, p in tracks.items()}
    yaw = {name: ([q.t for q in p], [math.degrees(q.yaw) for q in p]) for name, p in tracks.items()}
    drift = {}
    if truth:
        traj["truth"] = _xy(truth)
        yaw["truth"] = ([q.t for q in truth], [math.degrees(q.yaw) for q in truth])
        true_t = np.array([q.t for q in truth])
        for name, poses in tracks.items():
            t, d = [], []
            for p in poses:
                j = int(np.argmin(np.abs(true_t - p.t)))
                t.append(p.t)
                d.append(abs(math.degrees(wrap_angle(p.yaw - truth[j].yaw))))
            drift[name] = (t, d)
    files = {
        "trajectory.svg": line_chart(traj, "Trajectory", "x [m]", "y [m]", equal_axes=True),
        "yaw.svg": line_chart(yaw, "Heading", "t [s]", "yaw [deg]"),
    }
    if drift:
        files["drift.svg"] = line_chart(drift, "Yaw drift", "t [s]", "|yaw error| [deg]")
    written = []
    for name, text in files.items():
        (out / name).write_text(text)
        written.append(out / name)
    return written
