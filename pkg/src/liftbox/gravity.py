"""Gravity-direction estimation and cloud alignment.

The dominant surface normal of an indoor depth image (usually the floor)
is found by clustering per-pixel normals on the unit sphere, and the cloud
is rotated so that this consensus direction becomes world +Z:

    v = n_pred x z,  R = I + K + K^2 (1 - n_pred . z) / ||v||^2

with K the cross-product (skew) matrix of v. The formula is the standard
axis-angle rotation written without trigonometric calls; it is undefined
for antiparallel inputs (180-degree rotation), which raise
DegenerateRotationError.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRotationError, InvalidArgumentError, NoDataError
from .geometry import CameraModel, DepthImage, PointCloud, transform_cloud

logger = logging.getLogger(__name__)

Z_AXIS = np.array([0.0, 0.0, 1.0])

_UNIT_TOL = 1e-6
_PARALLEL_EPS = 1e-12


@dataclass(frozen=True)
class NormalMap:
    """Per-pixel unit normals in the camera frame.

    normals: (height, width, 3); rows without an estimate are arbitrary
             where valid is False.
    valid:   (height, width) bool.
    origin_depth: optional (height, width) z-depth of the pixel each
             normal came from; used as a clustering tie-break.
    """

    normals: np.ndarray
    valid: np.ndarray
    origin_depth: np.ndarray | None = None

    @property
    def height(self) -> int:
        return self.normals.shape[0]

    @property
    def width(self) -> int:
        return self.normals.shape[1]


@dataclass(frozen=True)
class NormalConsensus:
    """Dominant normal direction with its vote statistics."""

    normal: np.ndarray
    support: int
    inlier_fraction: float


def estimate_normals(depth: DepthImage, camera: CameraModel) -> NormalMap:
    """Estimate camera-frame surface normals by central differences.

    Each pixel whose four axial neighbours are valid gets
    normalize(dP/du x dP/dv) where P is the back-projected position,
    sign-flipped so the normal points toward the camera (negative dot
    with the viewing ray). Border pixels and pixels next to invalid
    depth carry no normal.
    """
    if (depth.width, depth.height) != (camera.width, camera.height):
        raise InvalidArgumentError("depth image size does not match camera")
    h, w = depth.height, depth.width
    uu, vv = np.meshgrid(np.arange(w), np.arange(h))
    d = depth.depths
    px = (uu - camera.cx) * d / camera.fx
    py = (vv - camera.cy) * d / camera.fy
    pos = np.stack([px, py, d], axis=-1)

    ok = depth.valid
    usable = np.zeros((h, w), dtype=bool)
    usable[1:-1, 1:-1] = (ok[1:-1, 1:-1] & ok[1:-1, :-2] & ok[1:-1, 2:]
                          & ok[:-2, 1:-1] & ok[2:, 1:-1])

    dpdu = np.zeros_like(pos)
    dpdv = np.zeros_like(pos)
    dpdu[1:-1, 1:-1] = (pos[1:-1, 2:] - pos[1:-1, :-2]) / 2.0
    dpdv[1:-1, 1:-1] = (pos[2:, 1:-1] - pos[:-2, 1:-1]) / 2.0

    n = np.cross(dpdu, dpdv)
    length = np.linalg.norm(n, axis=-1)
    usable &= length > 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        n = n / length[..., None]

    # orient toward the camera: the viewing ray is the position itself
    flip = np.sum(n * pos, axis=-1) > 0.0
    n[flip] = -n[flip]

    n[~usable] = 0.0
    origin = np.where(usable, d, np.nan)
    return NormalMap(normals=n, valid=usable, origin_depth=origin)


def _canonicalize(normals: np.ndarray) -> np.ndarray:
    """Map each normal to its antipodal representative.

    The representative has nz > 0; on the nz = 0 great circle the sign of
    ny decides, and on the remaining axis nx. Antipodal pairs therefore
    share a representative and land in the same bin.
    """
    n = normals.copy()
    flip = (n[:, 2] < 0)
    on_equator = n[:, 2] == 0
    flip |= on_equator & (n[:, 1] < 0)
    flip |= on_equator & (n[:, 1] == 0) & (n[:, 0] < 0)
    n[flip] = -n[flip]
    # -0.0 components from the flip would swing atan2 by a whole turn
    return n + 0.0


def cluster_normals(normals: NormalMap, bin_deg: float = 10.0) -> NormalConsensus:
    """Find the dominant normal by voting in spherical-coordinate bins.

    Bins are bin_deg wide in inclination and azimuth, computed on
    antipodally merged normals. The winning bin's members are averaged
    (one refinement step) and the mean is oriented into the camera-frame
    "-Y-ish" hemisphere, i.e. upward under the +Y-down convention.
    Count ties go to the bin with the lower mean origin depth, then to
    the lower bin index.
    """
    if not (0.0 < bin_deg <= 90.0):
        raise InvalidArgumentError(f"bin_deg must lie in (0, 90], got {bin_deg}")
    mask = normals.valid
    if not mask.any():
        raise NoDataError("normal map has no valid entries")
    n = normals.normals[mask].reshape(-1, 3)
    depths = None
    if normals.origin_depth is not None:
        depths = normals.origin_depth[mask].reshape(-1)

    rep = _canonicalize(n)
    bin_rad = math.radians(bin_deg)
    theta = np.arccos(np.clip(rep[:, 2], -1.0, 1.0))
    phi = np.arctan2(rep[:, 1], rep[:, 0])
    n_theta = max(1, int(math.ceil((math.pi / 2) / bin_rad)))
    n_phi = max(1, int(math.ceil((2 * math.pi) / bin_rad)))
    it = np.minimum((theta / bin_rad).astype(np.int64), n_theta - 1)
    ip = np.minimum(((phi + math.pi) / bin_rad).astype(np.int64), n_phi - 1)
    keys = it * n_phi + ip

    uniq, counts = np.unique(keys, return_counts=True)
    best = counts.max()
    candidates = uniq[counts == best]
    if len(candidates) > 1 and depths is not None:
        means = []
        for key in candidates:
            sel = depths[keys == key]
            sel = sel[np.isfinite(sel)]
            means.append(sel.mean() if sel.size else math.inf)
        means = np.asarray(means)
        candidates = candidates[means == means.min()]
    winner = int(candidates.min())

    members = rep[keys == winner]
    mean = members.mean(axis=0)
    length = np.linalg.norm(mean)
    if length < 1e-12:
        # members cancel out; fall back to the first member
        mean = members[0]
        length = 1.0
    n_pred = mean / length
    if n_pred[1] > 0.0:  # orient toward camera-frame -Y (up-ish)
        n_pred = -n_pred
    support = int(best)
    return NormalConsensus(normal=n_pred, support=support,
                           inlier_fraction=support / len(n))


def rodrigues_alignment(n_pred: np.ndarray, z_axis: np.ndarray = Z_AXIS) -> np.ndarray:
    """Rotation taking unit vector n_pred onto unit vector z_axis.

    Uses R = I + K + K^2 (1 - c) / ||v||^2 with v = n_pred x z_axis,
    c = n_pred . z_axis and K = skew(v). Returns the identity when the
    vectors already coincide and raises DegenerateRotationError when they
    are antiparallel (rotation angle of 180 degrees, axis ambiguous).
    """
    n_pred = np.asarray(n_pred, dtype=np.float64).reshape(3)
    z_axis = np.asarray(z_axis, dtype=np.float64).reshape(3)
    for name, vec in (("n_pred", n_pred), ("z_axis", z_axis)):
        if abs(np.linalg.norm(vec) - 1.0) > _UNIT_TOL:
            raise InvalidArgumentError(f"{name} must be a unit vector")
    v = np.cross(n_pred, z_axis)
    c = float(n_pred @ z_axis)
    s2 = float(v @ v)
    if s2 < _PARALLEL_EPS:
        if c > 0.0:
            return np.eye(3)
        raise DegenerateRotationError(
            "vectors are antiparallel; the aligning rotation is not unique")
    k = np.array([[0.0, -v[2], v[1]],
                  [v[2], 0.0, -v[0]],
                  [-v[1], v[0], 0.0]])
    return np.eye(3) + k + (k @ k) * ((1.0 - c) / s2)


def correct_orientation(
    cloud: PointCloud,
    depth: DepthImage,
    camera: CameraModel,
    bin_deg: float = 10.0,
    min_inlier_fraction: float = 0.2,
) -> tuple[PointCloud, np.ndarray, NormalConsensus]:
    """Rotate a lifted cloud so its dominant surface normal becomes +Z.

    The consensus normal is estimated from the depth image, mapped through
    the camera's extrinsic rotation into the cloud's frame, and aligned to
    the gravity axis. Returns (corrected cloud, applied rotation,
    consensus). A consensus supported by less than min_inlier_fraction of
    the normals is logged as low-confidence but still applied.
    """
    consensus = cluster_normals(estimate_normals(depth, camera), bin_deg=bin_deg)
    n_world = camera.rotation @ consensus.normal
    rotation = rodrigues_alignment(n_world, Z_AXIS)
    if consensus.inlier_fraction < min_inlier_fraction:
        logger.warning(
            "gravity consensus is weak: %.1f%% of normals (support %d)",
            100.0 * consensus.inlier_fraction, consensus.support)
    return transform_cloud(cloud, rotation), rotation, consensus
