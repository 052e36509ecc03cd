"""Point-cloud to depth-image rendering and multi-view visibility.

A cloud is rendered through a pinhole camera into a z-buffer: every point
splats a splat_px x splat_px square of pixels centered on its projection
and each covered pixel keeps the minimum depth. Visibility of individual
points follows from the same buffer (splat 1): a point is visible iff it
projects in-frame with positive depth no more than depth_tol behind the
buffer value at its pixel.

Viewpoints orbit the cloud centroid: theta_h rotates the camera about the
world +Z axis, then theta_v about the camera's own right axis. The sweep
grid used for training renders is theta in {-75, -60, ..., +75} degrees
on both axes (11 x 11 = 121 viewpoints).

Partial-view training pairs follow the occlusion-removal recipe: keep the
points visible from view A but not from view B, then render what remains
from view A. With A = B nothing survives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .geometry import CameraModel, DepthImage, PointCloud, project_points

SWEEP_STEP_DEG = 15.0
SWEEP_EXTENT_DEG = 75.0
DEFAULT_DEPTH_TOL = 0.05
DEFAULT_SPLAT_PX = 3


@dataclass(frozen=True)
class Viewpoint:
    """An orbit pose: horizontal/vertical angles (degrees) off a base camera."""

    theta_h: float
    theta_v: float
    base: CameraModel

    def __post_init__(self) -> None:
        for name, value in (("theta_h", self.theta_h), ("theta_v", self.theta_v)):
            if not (-180.0 < value <= 180.0):
                raise InvalidArgumentError(f"{name} must lie in (-180, 180], got {value}")


@dataclass(frozen=True)
class VisibilityResult:
    """Partition of point indices by what a viewpoint sees."""

    visible: np.ndarray
    occluded: np.ndarray
    out_of_frame: np.ndarray


def _axis_rotation(axis: np.ndarray, angle_deg: float) -> np.ndarray:
    """Right-handed rotation about a unit axis (classic axis-angle form)."""
    theta = math.radians(angle_deg)
    k = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + math.sin(theta) * k + (1.0 - math.cos(theta)) * (k @ k)


def orbit_camera(view: Viewpoint, center: np.ndarray) -> CameraModel:
    """Camera pose for a viewpoint orbiting the given world-space center.

    The base camera is rotated about `center` by theta_h around world +Z,
    then by theta_v around its (already swung) right axis. Intrinsics and
    image size are untouched, so renders stay comparable across views.
    """
    base = view.base
    center = np.asarray(center, dtype=np.float64).reshape(3)
    q_h = _axis_rotation(np.array([0.0, 0.0, 1.0]), view.theta_h)
    right = q_h @ base.rotation @ np.array([1.0, 0.0, 0.0])
    q_v = _axis_rotation(right, view.theta_v)
    q = q_v @ q_h
    return base.with_pose(rotation=q @ base.rotation,
                          translation=center + q @ (base.translation - center))


def render_depth(cloud: PointCloud, camera: CameraModel,
                 splat_px: int = DEFAULT_SPLAT_PX) -> DepthImage:
    """Z-buffer the cloud into a depth image at the camera's resolution.

    splat_px must be odd so the splat square is centered on the
    projection's pixel. Pixels no point covers come out invalid.
    """
    if splat_px < 1 or splat_px % 2 == 0:
        raise InvalidArgumentError(f"splat_px must be a positive odd integer, got {splat_px}")
    h, w = camera.height, camera.width
    buf = np.full((h, w), np.inf)
    if len(cloud) > 0:
        uv, z = project_points(cloud.points, camera)
        ok = z > 0.0
        pu = np.floor(uv[ok, 0] + 0.5).astype(np.int64)
        pv = np.floor(uv[ok, 1] + 0.5).astype(np.int64)
        zs = z[ok]
        r = splat_px // 2
        for dv in range(-r, r + 1):
            for du in range(-r, r + 1):
                cu = pu + du
                cv = pv + dv
                inb = (cu >= 0) & (cu < w) & (cv >= 0) & (cv < h)
                np.minimum.at(buf, (cv[inb], cu[inb]), zs[inb])
    valid = np.isfinite(buf)
    return DepthImage(depths=np.where(valid, buf, 0.0), valid=valid)


def visible_set(cloud: PointCloud, view: Viewpoint,
                depth_tol: float = DEFAULT_DEPTH_TOL) -> VisibilityResult:
    """Classify every point as visible, occluded, or out of frame.

    The z-buffer uses splat 1 (visibility should not be blurred by splat
    padding). Occluded means in-frame with positive depth but more than
    depth_tol behind the nearest point on the same pixel.
    """
    if depth_tol < 0:
        raise InvalidArgumentError(f"depth_tol must be >= 0, got {depth_tol}")
    n = len(cloud)
    if n == 0:
        empty = np.empty(0, dtype=np.int64)
        return VisibilityResult(empty, empty.copy(), empty.copy())
    camera = orbit_camera(view, cloud.points.mean(axis=0))
    uv, z = project_points(cloud.points, camera)
    pu = np.full(n, -1, dtype=np.int64)
    pv = np.full(n, -1, dtype=np.int64)
    front = z > 0.0
    pu[front] = np.floor(uv[front, 0] + 0.5).astype(np.int64)
    pv[front] = np.floor(uv[front, 1] + 0.5).astype(np.int64)
    in_frame = front & (pu >= 0) & (pu < camera.width) & (pv >= 0) & (pv < camera.height)

    buf = np.full((camera.height, camera.width), np.inf)
    np.minimum.at(buf, (pv[in_frame], pu[in_frame]), z[in_frame])
    passes = np.zeros(n, dtype=bool)
    passes[in_frame] = z[in_frame] <= buf[pv[in_frame], pu[in_frame]] + depth_tol

    idx = np.arange(n)
    return VisibilityResult(visible=idx[passes],
                            occluded=idx[in_frame & ~passes],
                            out_of_frame=idx[~in_frame])


def partial_view_removal(cloud: PointCloud, view_a: Viewpoint, view_b: Viewpoint,
                         depth_tol: float = DEFAULT_DEPTH_TOL) -> PointCloud:
    """Points of the cloud seen from A but not from B, provenance kept.

    Both viewpoints should share the same base camera; they orbit the
    same cloud centroid by construction. With identical angles the result
    is empty.
    """
    vis_a = visible_set(cloud, view_a, depth_tol=depth_tol).visible
    vis_b = visible_set(cloud, view_b, depth_tol=depth_tol).visible
    return cloud.take(np.setdiff1d(vis_a, vis_b))


def angle_sweep() -> list[tuple[float, float]]:
    """The fixed training sweep: {-75, -60, ..., +75} degrees squared.

    Returned row-major in theta_h then theta_v, 121 pairs total.
    """
    steps = [-SWEEP_EXTENT_DEG + SWEEP_STEP_DEG * k for k in range(11)]
    return [(th, tv) for th in steps for tv in steps]


def compactness(depth: DepthImage) -> float:
    """Valid-pixel count over the area of their tight bounding rectangle.

    1.0 means the valid region fills its bounding box completely; an
    image with no valid pixels scores 0.
    """
    vs, us = np.nonzero(depth.valid)
    if vs.size == 0:
        return 0.0
    area = (vs.max() - vs.min() + 1) * (us.max() - us.min() + 1)
    return float(vs.size / area)


def best_compact_view(
    cloud: PointCloud,
    base: CameraModel,
    candidates: list[tuple[float, float]],
    splat_px: int = DEFAULT_SPLAT_PX,
) -> tuple[Viewpoint, DepthImage]:
    """Render every candidate (theta_h, theta_v) and keep the most compact.

    Score ties prefer the smaller |theta_h| + |theta_v|, then earlier
    list position, so the result is deterministic for symmetric grids.
    """
    if not candidates:
        raise InvalidArgumentError("candidates must not be empty")
    center = cloud.points.mean(axis=0) if len(cloud) else np.zeros(3)
    best = None
    for pos, (th, tv) in enumerate(candidates):
        view = Viewpoint(theta_h=th, theta_v=tv, base=base)
        image = render_depth(cloud, orbit_camera(view, center), splat_px=splat_px)
        key = (-compactness(image), abs(th) + abs(tv), pos)
        if best is None or key < best[0]:
            best = (key, view, image)
    return best[1], best[2]


def make_training_renders(
    cloud: PointCloud,
    base: CameraModel,
    *,
    splat_px: int = DEFAULT_SPLAT_PX,
    depth_tol: float = DEFAULT_DEPTH_TOL,
) -> list[tuple[tuple[Viewpoint, Viewpoint], DepthImage]]:
    """Occlusion-augmented depth images for every non-identity sweep pair.

    For each swept view B, the points visible from the base view A=(0,0)
    but hidden from B are rendered from A. The (0,0) pair would always be
    empty and is skipped, leaving 120 entries in sweep order.
    """
    view_a = Viewpoint(theta_h=0.0, theta_v=0.0, base=base)
    vis_a = visible_set(cloud, view_a, depth_tol=depth_tol).visible
    out: list[tuple[tuple[Viewpoint, Viewpoint], DepthImage]] = []
    for th, tv in angle_sweep():
        if th == 0.0 and tv == 0.0:
            continue
        view_b = Viewpoint(theta_h=th, theta_v=tv, base=base)
        vis_b = visible_set(cloud, view_b, depth_tol=depth_tol).visible
        survivors = cloud.take(np.setdiff1d(vis_a, vis_b))
        image = render_depth(survivors, base, splat_px=splat_px)
        out.append(((view_a, view_b), image))
    return out
