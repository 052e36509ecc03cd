"""Pseudo 3D box annotation from 2D detections and a lifted cloud.

For every 2D detection the points whose source pixels fall inside the box
are gathered (a frustum crop), clustered with DBSCAN, and the largest
cluster is wrapped in a gravity-aligned box: minimum-area rectangle in
bird's-eye view, vertical extent from the z range. Boxes whose dimensions
are implausible against a per-category size prior are filtered out:

    keep  iff  t < dim / prior_dim < 1/t   for all three sorted dims

with strict inequalities on both ends.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import (
    DegenerateGeometryError,
    EmptyClusterError,
    InvalidArgumentError,
    UnknownCategoryError,
)
from .geometry import PointCloud
from .priors import SizePriorDB

NOISE = -1


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned pixel-space detection box, [umin, umax) x [vmin, vmax)."""

    umin: float
    vmin: float
    umax: float
    vmax: float
    category: str
    score: float = 1.0

    def __post_init__(self) -> None:
        if not (self.umin < self.umax and self.vmin < self.vmax):
            raise InvalidArgumentError(
                f"degenerate 2D box: ({self.umin}, {self.vmin}, {self.umax}, {self.vmax})")


def _normalize_yaw(yaw: float) -> float:
    return (yaw + math.pi / 2) % math.pi - math.pi / 2


@dataclass(frozen=True)
class Box3D:
    """Upright 3D box: center, dims (L, W, H), yaw about +Z.

    Yaw is normalized into [-pi/2, pi/2); a box rotated by pi is the same
    box, so nothing is lost. L and W span the footprint, H the vertical
    extent.
    """

    center: tuple[float, float, float]
    dims: tuple[float, float, float]
    yaw: float
    category: str
    score: float | None = None

    def __post_init__(self) -> None:
        center = tuple(float(c) for c in self.center)
        dims = tuple(float(d) for d in self.dims)
        if len(center) != 3 or len(dims) != 3:
            raise InvalidArgumentError("center and dims must be 3-tuples")
        if not all(math.isfinite(c) for c in center):
            raise InvalidArgumentError("box center must be finite")
        if not all(d > 0 and math.isfinite(d) for d in dims):
            raise InvalidArgumentError(f"box dims must be positive, got {dims}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", _normalize_yaw(float(self.yaw)))

    @property
    def volume(self) -> float:
        length, width, height = self.dims
        return length * width * height

    def bev_corners(self) -> np.ndarray:
        """Footprint corners (4, 2), counter-clockwise."""
        length, width, _ = self.dims
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        half = np.array([[length / 2, width / 2],
                         [-length / 2, width / 2],
                         [-length / 2, -width / 2],
                         [length / 2, -width / 2]])
        rot = np.array([[c, -s], [s, c]])
        return half @ rot.T + np.array(self.center[:2])

    def corners(self) -> np.ndarray:
        """All eight corners (8, 3): bottom face then top face."""
        bev = self.bev_corners()
        z0 = self.center[2] - self.dims[2] / 2
        z1 = self.center[2] + self.dims[2] / 2
        bottom = np.column_stack([bev, np.full(4, z0)])
        top = np.column_stack([bev, np.full(4, z1)])
        return np.vstack([bottom, top])


@dataclass(frozen=True)
class DropRecord:
    """Why an input 2D box produced no 3D annotation."""

    index: int
    category: str
    reason: str


@dataclass(frozen=True)
class SizeFilterDecision:
    kept: bool
    reason: str  # "ok" | "size-filtered" | "unknown-category"
    ratios: tuple[float, float, float] | None


def frustum_points(cloud: PointCloud, box: Box2D) -> PointCloud:
    """Sub-cloud whose source pixels fall inside the 2D box."""
    if cloud.provenance is None:
        raise InvalidArgumentError("cloud has no pixel provenance; cannot crop a frustum")
    u = cloud.provenance[:, 0]
    v = cloud.provenance[:, 1]
    inside = (u >= box.umin) & (u < box.umax) & (v >= box.vmin) & (v < box.vmax)
    return cloud.take(np.nonzero(inside)[0])


def dbscan(points: np.ndarray, eps: float = 0.1, min_pts: int = 10) -> np.ndarray:
    """Density clustering; returns a label per point, NOISE (-1) for none.

    A point is core iff at least min_pts points (itself included) lie
    within Euclidean distance eps, boundary inclusive. Clusters are the
    connected components of core points plus any border points reached
    while growing them. Iteration is in ascending point index, so cluster
    ids count up in discovery order and a border point in reach of two
    clusters joins the one discovered first.
    """
    if eps <= 0:
        raise InvalidArgumentError(f"eps must be positive, got {eps}")
    if min_pts < 1:
        raise InvalidArgumentError(f"min_pts must be >= 1, got {min_pts}")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidArgumentError(f"points must be (N, 3), got {pts.shape}")
    n = len(pts)
    labels = np.full(n, -2, dtype=np.int64)  # -2 = unvisited
    eps2 = eps * eps

    def region(i: int) -> np.ndarray:
        d2 = np.sum((pts - pts[i]) ** 2, axis=1)
        return np.nonzero(d2 <= eps2)[0]

    cluster = 0
    for i in range(n):
        if labels[i] != -2:
            continue
        neighbours = region(i)
        if len(neighbours) < min_pts:
            labels[i] = NOISE
            continue
        labels[i] = cluster
        queue = deque(int(j) for j in neighbours)
        while queue:
            j = queue.popleft()
            if labels[j] == NOISE:
                labels[j] = cluster  # border point, claimed by this cluster
                continue
            if labels[j] != -2:
                continue
            labels[j] = cluster
            j_neighbours = region(j)
            if len(j_neighbours) >= min_pts:
                queue.extend(int(k) for k in j_neighbours)
        cluster += 1
    return labels


def select_object_cluster(points: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Indices of the cluster most likely to be the detected object.

    Largest cluster wins; exact size ties go to the cluster whose mean
    distance to the centroid of all points is smaller, then to the lower
    cluster id. Raises EmptyClusterError when everything is noise.
    """
    pts = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    ids = np.unique(labels[labels >= 0])
    if ids.size == 0:
        raise EmptyClusterError("no clusters found (all points are noise)")
    centroid = pts.mean(axis=0)
    best = None
    for cid in ids:
        idx = np.nonzero(labels == cid)[0]
        mean_dist = float(np.linalg.norm(pts[idx] - centroid, axis=1).mean())
        key = (-len(idx), mean_dist, int(cid))
        if best is None or key < best[0]:
            best = (key, idx)
    return best[1]


def fit_box(points: np.ndarray, category: str = "", score: float | None = None) -> Box3D:
    """Tightest upright box around points, minimum-area footprint in BEV.

    The footprint is the minimum-area enclosing rectangle of the XY
    projection, found by rotating calipers over the convex hull: the
    optimal rectangle shares an orientation with some hull edge, so only
    hull-edge angles (modulo pi/2) are candidates. Area ties prefer the
    smaller canonical angle, which pins the axis-aligned case to yaw 0.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidArgumentError(f"points must be (N, 3), got {pts.shape}")
    if len(pts) < 3:
        raise DegenerateGeometryError(f"need at least 3 points, got {len(pts)}")
    xy = pts[:, :2]
    try:
        hull = ConvexHull(xy)
    except QhullError as exc:
        raise DegenerateGeometryError(f"XY projection is degenerate: {exc}") from exc
    ring = xy[hull.vertices]  # counter-clockwise

    edges = np.roll(ring, -1, axis=0) - ring
    angles = np.arctan2(edges[:, 1], edges[:, 0]) % (math.pi / 2)

    best_key: tuple[float, float] | None = None
    best_rect = None  # (ang, mid_x, mid_y, extent_x, extent_y) in the rotated frame
    for ang in angles:
        c, s = math.cos(ang), math.sin(ang)
        xr = ring[:, 0] * c + ring[:, 1] * s
        yr = -ring[:, 0] * s + ring[:, 1] * c
        ex = xr.max() - xr.min()
        ey = yr.max() - yr.min()
        key = (ex * ey, float(ang))
        if best_key is None or key < best_key:
            best_key = key
            best_rect = (float(ang), (xr.min() + xr.max()) / 2,
                         (yr.min() + yr.max()) / 2, ex, ey)
    ang, mx, my, ex, ey = best_rect
    c, s = math.cos(ang), math.sin(ang)
    center_xy = (mx * c - my * s, mx * s + my * c)

    if ex >= ey:
        length, width, yaw = ex, ey, ang
    else:
        length, width, yaw = ey, ex, ang + math.pi / 2
    zmin = float(pts[:, 2].min())
    zmax = float(pts[:, 2].max())
    height = zmax - zmin
    if min(length, width, height) <= 0.0:
        raise DegenerateGeometryError(
            f"points span a degenerate box ({length:.3g} x {width:.3g} x {height:.3g})")
    return Box3D(center=(center_xy[0], center_xy[1], (zmin + zmax) / 2),
                 dims=(length, width, height), yaw=yaw,
                 category=category, score=score)


def size_filter(box: Box3D, priors: SizePriorDB, t: float = 0.1,
                unknown_policy: str = "keep") -> SizeFilterDecision:
    """Judge a box against its category's size prior (strict two-sided test).

    Dimensions are compared sorted descending on both sides, so the
    labelling of L/W/H does not matter. A ratio exactly equal to t or 1/t
    fails. Unknown categories are kept (with a diagnostic reason) or
    rejected depending on unknown_policy.
    """
    if not (0.0 < t < 1.0):
        raise InvalidArgumentError(f"threshold t must lie in (0, 1), got {t}")
    if unknown_policy not in ("keep", "reject"):
        raise InvalidArgumentError(f"unknown_policy must be keep or reject, got {unknown_policy!r}")
    prior = priors.get(box.category)
    if prior is None:
        if unknown_policy == "keep":
            return SizeFilterDecision(kept=True, reason="unknown-category", ratios=None)
        return SizeFilterDecision(kept=False, reason="unknown-category", ratios=None)
    ratios = tuple(b / p for b, p in zip(sorted(box.dims, reverse=True),
                                         sorted(prior, reverse=True)))
    kept = all(t < r < 1.0 / t for r in ratios)
    return SizeFilterDecision(kept=kept, reason="ok" if kept else "size-filtered",
                              ratios=ratios)


def generate_annotations(
    cloud: PointCloud,
    boxes2d: list[Box2D],
    priors: SizePriorDB,
    *,
    eps: float = 0.1,
    min_pts: int = 10,
    t: float = 0.1,
    unknown_policy: str = "keep",
) -> tuple[list[Box3D], list[DropRecord]]:
    """Run the frustum -> cluster -> fit -> filter chain per 2D box.

    Output order follows input order. Every input box either yields one
    Box3D (category and score copied over) or exactly one DropRecord; a
    failing stage never aborts the remaining boxes.
    """
    kept: list[Box3D] = []
    drops: list[DropRecord] = []
    for index, box2d in enumerate(boxes2d):
        sub = frustum_points(cloud, box2d)
        try:
            labels = dbscan(sub.points, eps=eps, min_pts=min_pts)
            chosen = select_object_cluster(sub.points, labels)
            box3d = fit_box(sub.points[chosen], category=box2d.category,
                            score=box2d.score)
        except EmptyClusterError:
            drops.append(DropRecord(index, box2d.category, "empty-cluster"))
            continue
        except DegenerateGeometryError:
            drops.append(DropRecord(index, box2d.category, "degenerate-geometry"))
            continue
        decision = size_filter(box3d, priors, t=t, unknown_policy=unknown_policy)
        if decision.kept:
            kept.append(box3d)
        else:
            drops.append(DropRecord(index, box2d.category, decision.reason))
    return kept, drops


__all__ = [
    "Box2D", "Box3D", "DropRecord", "SizeFilterDecision", "NOISE",
    "frustum_points", "dbscan", "select_object_cluster", "fit_box",
    "size_filter", "generate_annotations", "UnknownCategoryError",
]
