"""Pinhole camera model and depth-to-point-cloud lifting.

Coordinate conventions used across the package:

  camera frame : +X right, +Y down, +Z forward (optical axis)
  world frame  : +Z up once gravity has been corrected
  pixels       : (u, v) = (column, row), pixel centers at integer
                 coordinates, u in [0, width), v in [0, height)

A CameraModel's extrinsics map camera to world: p_world = R @ p_cam + t.
Depth values are metric z-depth along the optical axis, in meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

_ROT_TOL = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


def _check_rotation(rotation: np.ndarray) -> np.ndarray:
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape != (3, 3):
        raise InvalidArgumentError(f"rotation must be 3x3, got {rotation.shape}")
    err = np.abs(rotation @ rotation.T - np.eye(3)).max()
    if err > _ROT_TOL:
        raise InvalidArgumentError(f"rotation is not orthonormal (|R R^T - I| = {err:.3g})")
    det = float(np.linalg.det(rotation))
    if abs(det - 1.0) > _ROT_TOL:
        raise InvalidArgumentError(f"rotation must have det +1, got {det:.12g}")
    return rotation


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus a camera-to-world rigid transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise InvalidArgumentError("image dimensions must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidArgumentError("focal lengths must be positive")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise InvalidArgumentError("principal point must lie inside the image")
        rotation = _check_rotation(self.rotation)
        translation = np.asarray(self.translation, dtype=np.float64)
        if translation.shape != (3,):
            raise InvalidArgumentError(f"translation must be a 3-vector, got {translation.shape}")
        object.__setattr__(self, "rotation", _readonly(rotation))
        object.__setattr__(self, "translation", _readonly(translation))

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        """Apply the extrinsic transform to camera-frame points (N, 3)."""
        return points @ self.rotation.T + self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Inverse of camera_to_world."""
        return (points - self.translation) @ self.rotation

    def with_pose(self, rotation: np.ndarray, translation: np.ndarray) -> "CameraModel":
        """Same intrinsics, new extrinsics."""
        return CameraModel(
            fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
            width=self.width, height=self.height,
            rotation=rotation, translation=translation,
        )


@dataclass(frozen=True)
class DepthImage:
    """Metric z-depth raster. Invalid pixels carry no depth.

    depths: (height, width) float64, meters.
    valid:  (height, width) bool. Wherever valid is True the depth must be
            finite and strictly positive.
    """

    depths: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        depths = np.asarray(self.depths, dtype=np.float64)
        if depths.ndim != 2:
            raise InvalidArgumentError(f"depths must be 2-D, got shape {depths.shape}")
        valid = np.asarray(self.valid, dtype=bool)
        if valid.shape != depths.shape:
            raise InvalidArgumentError("valid mask shape must match depths")
        picked = depths[valid]
        if picked.size and (not np.all(np.isfinite(picked)) or picked.min() <= 0.0):
            raise InvalidArgumentError("valid depths must be finite and > 0")
        object.__setattr__(self, "depths", _readonly(depths))
        v = valid.copy()
        v.flags.writeable = False
        object.__setattr__(self, "valid", v)

    @property
    def height(self) -> int:
        return self.depths.shape[0]

    @property
    def width(self) -> int:
        return self.depths.shape[1]

    @classmethod
    def from_array(cls, depths: np.ndarray) -> "DepthImage":
        """Build a DepthImage treating non-finite and <= 0 entries as invalid."""
        depths = np.asarray(depths, dtype=np.float64)
        valid = np.isfinite(depths) & (depths > 0.0)
        clean = np.where(valid, depths, 0.0)
        return cls(depths=clean, valid=valid)


@dataclass(frozen=True)
class PointCloud:
    """Points (N, 3) float64 with optional per-point source pixel (u, v)."""

    points: np.ndarray
    provenance: np.ndarray | None = None

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise InvalidArgumentError(f"points must be (N, 3), got {points.shape}")
        object.__setattr__(self, "points", _readonly(points))
        if self.provenance is not None:
            prov = np.asarray(self.provenance)
            if prov.shape != (points.shape[0], 2):
                raise InvalidArgumentError("provenance must be (N, 2) pixel coordinates")
            prov = prov.astype(np.int64, copy=True)
            prov.flags.writeable = False
            object.__setattr__(self, "provenance", prov)

    def __len__(self) -> int:
        return self.points.shape[0]

    def take(self, indices: np.ndarray) -> "PointCloud":
        """Sub-cloud at the given point indices, provenance preserved."""
        idx = np.asarray(indices, dtype=np.int64)
        prov = self.provenance[idx] if self.provenance is not None else None
        return PointCloud(points=self.points[idx], provenance=prov)


def intrinsics_from_fov(width: int, height: int, fov_deg: float) -> CameraModel:
    """Camera with identity pose from image size and horizontal field of view.

    fx = fy = (width / 2) / tan(fov / 2), principal point at the image
    center. Square pixels are assumed, so the vertical field of view
    follows from the aspect ratio.
    """
    if width <= 0 or height <= 0:
        raise InvalidArgumentError("image dimensions must be positive")
    if not (0.0 < fov_deg < 180.0):
        raise InvalidArgumentError(f"fov must lie in (0, 180) degrees, got {fov_deg}")
    f = (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    return CameraModel(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
                       width=width, height=height)


def lift_depth(depth: DepthImage, camera: CameraModel) -> PointCloud:
    """Back-project every valid depth pixel into a world-frame point cloud.

    Points appear in row-major pixel order (v ascending, then u). Each
    point records its source pixel in the cloud's provenance. Invalid
    pixels contribute nothing.
    """
    if (depth.width, depth.height) != (camera.width, camera.height):
        raise InvalidArgumentError(
            f"depth image is {depth.width}x{depth.height} but camera expects "
            f"{camera.width}x{camera.height}")
    vv, uu = np.nonzero(depth.valid)  # nonzero scans row-major
    d = depth.depths[vv, uu]
    x = (uu - camera.cx) * d / camera.fx
    y = (vv - camera.cy) * d / camera.fy
    p_cam = np.column_stack([x, y, d])
    p_world = camera.camera_to_world(p_cam)
    return PointCloud(points=p_world, provenance=np.column_stack([uu, vv]))


def project_points(points: np.ndarray, camera: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Project world points; returns ((N, 2) pixel coords, (N,) z-depths).

    Pixel coordinates for points at or behind the camera plane (z <= 0)
    are NaN; the returned depth is the camera-frame z either way.
    """
    p_cam = camera.world_to_camera(np.asarray(points, dtype=np.float64))
    z = p_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * p_cam[:, 0] / z + camera.cx
        v = camera.fy * p_cam[:, 1] / z + camera.cy
    uv = np.column_stack([u, v])
    uv[z <= 0.0] = np.nan
    return uv, z


def project_point(point: np.ndarray, camera: CameraModel) -> tuple[float, float, float]:
    """Project a single world point to (u, v, z).

    z <= 0 reports behind-camera; u and v are NaN in that case.
    """
    uv, z = project_points(np.asarray(point, dtype=np.float64).reshape(1, 3), camera)
    return float(uv[0, 0]), float(uv[0, 1]), float(z[0])


def transform_cloud(cloud: PointCloud, rotation: np.ndarray,
                    translation: np.ndarray | None = None) -> PointCloud:
    """Rigidly transform a cloud: p' = R @ p + t. Provenance is kept."""
    rotation = _check_rotation(rotation)
    if translation is None:
        translation = np.zeros(3)
    translation = np.asarray(translation, dtype=np.float64)
    if translation.shape != (3,):
        raise InvalidArgumentError(f"translation must be a 3-vector, got {translation.shape}")
    return PointCloud(points=cloud.points @ rotation.T + translation,
                      provenance=cloud.provenance)
