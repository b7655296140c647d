"""Line-oriented ``key = value`` configuration files.

Keys are ``section.field`` where section is one of ``preprocess``,
``features``, ``registration``, ``planar``, ``canvas``, ``fusion`` or
``pipeline``.
Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .exceptions import FormatError


def read_key_values(path) -> dict:
    """Mapping of key to raw string value."""
    return {k: v for k, (_, v) in read_entries(path).items()}


def read_entries(path) -> dict:
    """Mapping of key to ``(line_number, raw_value)``."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FormatError(path, 0, f"cannot read: {exc}") from exc
    out = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        key, sep, value = text.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise FormatError(path, lineno, "expected 'key = value'")
        if key in out:
            raise FormatError(path, lineno, f"duplicate key {key!r}")
        out[key] = (lineno, value)
    return out


def _coerce(raw: str, current):
    if raw.lower() == "none":
        return None
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if current is None:
        return int(raw)
    return raw


@dataclass(frozen=True)
class PipelineOptions:
    """How the odometry run chains matches.

    Scans are matched against a keyframe renewed every ``*_keyframe_interval``
    scans (1 = strictly consecutive pairs).
    """

    planar_keyframe_interval: int = 10
    full6d_keyframe_interval: int = 1
    planar_subpixel: bool = True

    def __post_init__(self):
        if self.planar_keyframe_interval < 1 or self.full6d_keyframe_interval < 1:
            raise ValueError("keyframe intervals must be >= 1")


SECTIONS = ("preprocess", "features", "registration", "planar", "canvas", "fusion", "pipeline")


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable default of the pipeline, grouped by stage."""

    preprocess: object = None
    features: object = None
    registration: object = None
    planar: object = None
    fusion: object = None
    pipeline: object = None

    def __post_init__(self):
        from .navfusion import FusionConfig
        from .planar import PlanarConfig
        from .preprocess import PreprocessConfig
        from .registration import FeatureConfig, RegistrationConfig

        defaults = dict(preprocess=PreprocessConfig(), features=FeatureConfig(), registration=RegistrationConfig(),
                        planar=PlanarConfig(), fusion=FusionConfig(), pipeline=PipelineOptions())
        for name, value in defaults.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)

    def to_lines(self) -> list[str]:
        lines = []
        for section in ("preprocess", "features", "registration", "planar", "fusion", "pipeline"):
            obj = getattr(self, section)
            for f in dataclasses.fields(obj):
                value = getattr(obj, f.name)
                if dataclasses.is_dataclass(value):
                    for g in dataclasses.fields(value):
                        lines.append(f"canvas.{g.name} = {getattr(value, g.name)}")
                else:
                    lines.append(f"{section}.{f.name} = {value}")
        return lines


def load_config(path=None) -> PipelineConfig:
    """Defaults overridden by the entries of ``path`` (if given)."""
    cfg = PipelineConfig()
    if path is None:
        return cfg
    path = Path(path)
    entries = read_entries(path)
    sections = {s: {} for s in SECTIONS}
    for key, (lineno, raw) in entries.items():
        section, _, name = key.partition(".")
        if section not in sections or not name:
            raise FormatError(path, lineno, f"unknown key {key!r}")
        target = cfg.planar.canvas if section == "canvas" else getattr(cfg, section)
        if name not in {f.name for f in dataclasses.fields(target)}:
            raise FormatError(path, lineno, f"unknown key {key!r}")
        try:
            value = _coerce(raw, getattr(target, name))
            dataclasses.replace(target, **{name: value})  # field-level validation, reported at this line
        except (ValueError, TypeError) as exc:
            raise FormatError(path, lineno, str(exc)) from None
        sections[section][name] = value
    try:
        canvas = dataclasses.replace(cfg.planar.canvas, **sections.pop("canvas"))
        planar = dataclasses.replace(cfg.planar, canvas=canvas, **sections.pop("planar"))
        parts = {s: dataclasses.replace(getattr(cfg, s), **v) for s, v in sections.items()}
    except (ValueError, TypeError) as exc:
        raise FormatError(path, 0, f"invalid configuration: {exc}") from None
    return PipelineConfig(planar=planar, **parts)
