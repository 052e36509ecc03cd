"""Pipeline configuration: defaults, TOML file, command-line overrides.

Precedence is flags > config file > built-in defaults. The effective
configuration is hashed (sha256 of its canonical JSON form) into run
manifests, so two runs compare equal exactly when every effective
parameter matches.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli

from .errors import InvalidArgumentError

RENDER_FORMAT_CHOICES = ("ply", "annotations", "renders")


@dataclass(frozen=True)
class CameraConfig:
    fov_deg: float = 55.0


@dataclass(frozen=True)
class LiftConfig:
    gravity_align: bool = True
    bin_deg: float = 10.0
    min_inlier_fraction: float = 0.2


@dataclass(frozen=True)
class ClusterConfig:
    eps: float = 0.1
    min_pts: int = 10


@dataclass(frozen=True)
class SizeFilterConfig:
    t: float = 0.1
    unknown_policy: str = "keep"


@dataclass(frozen=True)
class RenderConfig:
    splat_px: int = 3
    depth_tol: float = 0.05


@dataclass(frozen=True)
class EvaluateConfig:
    iou_thresh: float = 0.25
    rotated: bool = True
    top_k: int = 10


@dataclass(frozen=True)
class IoConfig:
    output_dir: str = "."
    formats: tuple[str, ...] = RENDER_FORMAT_CHOICES


@dataclass(frozen=True)
class PipelineConfig:
    camera: CameraConfig = field(default_factory=CameraConfig)
    lift: LiftConfig = field(default_factory=LiftConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    size_filter: SizeFilterConfig = field(default_factory=SizeFilterConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    io: IoConfig = field(default_factory=IoConfig)


def validate_config(cfg: PipelineConfig) -> PipelineConfig:
    """Range-check every parameter; raises InvalidArgumentError."""
    if not (0.0 < cfg.camera.fov_deg < 180.0):
        raise InvalidArgumentError(f"camera.fov_deg must lie in (0, 180), got {cfg.camera.fov_deg}")
    if not (0.0 < cfg.lift.bin_deg <= 90.0):
        raise InvalidArgumentError(f"lift.bin_deg must lie in (0, 90], got {cfg.lift.bin_deg}")
    if not (0.0 <= cfg.lift.min_inlier_fraction <= 1.0):
        raise InvalidArgumentError("lift.min_inlier_fraction must lie in [0, 1]")
    if cfg.cluster.eps <= 0:
        raise InvalidArgumentError(f"cluster.eps must be positive, got {cfg.cluster.eps}")
    if cfg.cluster.min_pts < 1:
        raise InvalidArgumentError(f"cluster.min_pts must be >= 1, got {cfg.cluster.min_pts}")
    if not (0.0 < cfg.size_filter.t < 1.0):
        raise InvalidArgumentError(f"size_filter.t must lie in (0, 1), got {cfg.size_filter.t}")
    if cfg.size_filter.unknown_policy not in ("keep", "reject"):
        raise InvalidArgumentError("size_filter.unknown_policy must be keep or reject")
    if cfg.render.splat_px < 1 or cfg.render.splat_px % 2 == 0:
        raise InvalidArgumentError(f"render.splat_px must be odd and >= 1, got {cfg.render.splat_px}")
    if cfg.render.depth_tol < 0:
        raise InvalidArgumentError(f"render.depth_tol must be >= 0, got {cfg.render.depth_tol}")
    if not (0.0 < cfg.evaluate.iou_thresh <= 1.0):
        raise InvalidArgumentError("evaluate.iou_thresh must lie in (0, 1]")
    if cfg.evaluate.top_k < 1:
        raise InvalidArgumentError("evaluate.top_k must be >= 1")
    bad = set(cfg.io.formats) - set(RENDER_FORMAT_CHOICES)
    if bad:
        raise InvalidArgumentError(
            f"io.formats contains unknown entries {sorted(bad)} "
            f"(choose from {list(RENDER_FORMAT_CHOICES)})")
    return cfg


_SECTION_TYPES = {
    "camera": CameraConfig, "lift": LiftConfig, "cluster": ClusterConfig,
    "size_filter": SizeFilterConfig, "render": RenderConfig,
    "evaluate": EvaluateConfig, "io": IoConfig,
}


def _build_section(name: str, cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise InvalidArgumentError(
            f"unknown key(s) in [{name}]: {sorted(unknown)} (known: {sorted(known)})")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        default = getattr(cls(), f.name)
        if f.name == "formats":
            if not isinstance(value, (list, tuple)):
                raise InvalidArgumentError("io.formats must be a list")
            value = tuple(str(v) for v in value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise InvalidArgumentError(f"{name}.{f.name} must be a boolean")
        elif isinstance(default, int):
            if not isinstance(value, int) or isinstance(value, bool):
                raise InvalidArgumentError(f"{name}.{f.name} must be an integer")
        elif isinstance(default, float):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise InvalidArgumentError(f"{name}.{f.name} must be a number")
            value = float(value)
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise InvalidArgumentError(f"{name}.{f.name} must be a string")
        kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise InvalidArgumentError(f"bad [{name}] section: {exc}") from exc


def config_from_dict(doc: dict) -> PipelineConfig:
    unknown = set(doc) - set(_SECTION_TYPES)
    if unknown:
        raise InvalidArgumentError(
            f"unknown config section(s): {sorted(unknown)} "
            f"(known: {sorted(_SECTION_TYPES)})")
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        data = doc.get(name, {})
        if not isinstance(data, dict):
            raise InvalidArgumentError(f"config section [{name}] must be a table")
        sections[name] = _build_section(name, cls, data)
    return validate_config(PipelineConfig(**sections))


def load_config(path: str | Path | None) -> PipelineConfig:
    """Parse a TOML config file; None gives the built-in defaults."""
    if path is None:
        return validate_config(PipelineConfig())
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise InvalidArgumentError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = tomli.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomli.TOMLDecodeError) as exc:
        raise InvalidArgumentError(f"config {path} is not valid TOML: {exc}") from exc
    return config_from_dict(doc)


def override(cfg: PipelineConfig, section: str, **values) -> PipelineConfig:
    """Functional update of one section (used for flag overrides)."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    current = getattr(cfg, section)
    try:
        updated = replace(current, **values)
    except TypeError as exc:
        raise InvalidArgumentError(f"bad override for [{section}]: {exc}") from exc
    return validate_config(replace(cfg, **{section: updated}))


def config_hash(cfg: PipelineConfig) -> str:
    canon = json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
