"""Detection evaluation: rotated 3D IoU, average precision, volume ratios.

IoU of two upright boxes factors into a bird's-eye-view polygon overlap
times a vertical interval overlap. The BEV intersection of two rotated
rectangles is computed exactly with Sutherland-Hodgman clipping (both
polygons are convex).

AP follows the usual protocol: detections of one category are pooled
across scenes, sorted by descending score, and greedily matched to the
unmatched same-scene ground-truth box of highest IoU at or above the
threshold. The precision-recall curve is integrated with all-points
interpolation (precision made monotone from the right).

Volume-ratio diagnostics compare fitted box volumes against a reference
(size priors or matched ground truth) and summarize each category with a
Gaussian kernel-density estimate; a distribution peaked at 1.0 means the
fitted sizes agree with the reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .annotate import Box3D
from .errors import InvalidArgumentError, NoDataError
from .priors import SizePriorDB

GRID_SIZE = 512


@dataclass(frozen=True)
class DetectionSet:
    """Scene id -> scored detections. Every box must carry a score."""

    scenes: dict[str, tuple[Box3D, ...]]

    def __post_init__(self) -> None:
        clean = {}
        for scene, boxes in self.scenes.items():
            boxes = tuple(boxes)
            for b in boxes:
                if b.score is None:
                    raise InvalidArgumentError(
                        f"detection without score in scene {scene!r} ({b.category})")
            clean[scene] = boxes
        object.__setattr__(self, "scenes", clean)


@dataclass(frozen=True)
class GroundTruthSet:
    """Scene id -> reference boxes. Scores, if any, are ignored."""

    scenes: dict[str, tuple[Box3D, ...]]

    def __post_init__(self) -> None:
        object.__setattr__(self, "scenes",
                           {scene: tuple(boxes) for scene, boxes in self.scenes.items()})


def _side(cross: float, eps: float) -> int:
    if cross > eps:
        return 1
    if cross < -eps:
        return -1
    return 0


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman: clip a polygon by a convex CCW polygon.

    Vertices within a small tolerance of a clip edge count as inside and
    intersections are only computed on strict sign changes; otherwise a
    polygon clipped by itself emits spurious far-away intersection points
    where rounding noise flips the side of an on-edge vertex.
    """
    output = [tuple(p) for p in subject]
    span = 1.0 + float(np.abs(subject).max(initial=0.0)) \
        + float(np.abs(clip).max(initial=0.0))
    eps = 1e-9 * span * span
    cp1 = tuple(clip[-1])
    for cp2 in (tuple(p) for p in clip):
        if not output:
            break
        ex, ey = cp2[0] - cp1[0], cp2[1] - cp1[1]
        inputs = output
        output = []
        s = inputs[-1]
        s_side = _side(ex * (s[1] - cp1[1]) - ey * (s[0] - cp1[0]), eps)
        for e in inputs:
            e_side = _side(ex * (e[1] - cp1[1]) - ey * (e[0] - cp1[0]), eps)
            if s_side * e_side < 0:
                dcx, dcy = cp1[0] - cp2[0], cp1[1] - cp2[1]
                dpx, dpy = s[0] - e[0], s[1] - e[1]
                n1 = cp1[0] * cp2[1] - cp1[1] * cp2[0]
                n2 = s[0] * e[1] - s[1] * e[0]
                denom = dcx * dpy - dcy * dpx
                if denom != 0.0:
                    output.append(((n1 * dpx - n2 * dcx) / denom,
                                   (n1 * dpy - n2 * dcy) / denom))
            if e_side >= 0:
                output.append(e)
            s, s_side = e, e_side
        cp1 = cp2
    return np.asarray(output, dtype=np.float64).reshape(-1, 2)


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def iou3d(a: Box3D, b: Box3D) -> float:
    """Exact intersection-over-union of two upright (yaw-rotated) boxes."""
    z_lo = max(a.center[2] - a.dims[2] / 2, b.center[2] - b.dims[2] / 2)
    z_hi = min(a.center[2] + a.dims[2] / 2, b.center[2] + b.dims[2] / 2)
    dz = z_hi - z_lo
    if dz <= 0.0:
        return 0.0
    inter_bev = _polygon_area(_clip_polygon(a.bev_corners(), b.bev_corners()))
    inter = inter_bev * dz
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou3d_axis_aligned(a: Box3D, b: Box3D) -> float:
    """IoU of the boxes with yaw ignored (axis-aligned extents)."""
    inter = 1.0
    for axis in range(3):
        lo = max(a.center[axis] - a.dims[axis] / 2, b.center[axis] - b.dims[axis] / 2)
        hi = min(a.center[axis] + a.dims[axis] / 2, b.center[axis] + b.dims[axis] / 2)
        if hi <= lo:
            return 0.0
        inter *= hi - lo
    union = a.volume + b.volume - inter
    return inter / union if union > 0 else 0.0


def _match_category(dets: DetectionSet, gts: GroundTruthSet, category: str,
                    iou_thresh: float, rotated: bool) -> tuple[np.ndarray, np.ndarray, int]:
    """Greedy matching; returns (tp flags, fp flags, number of GT boxes)."""
    iou = iou3d if rotated else iou3d_axis_aligned
    pool = []
    for scene in dets.scenes:
        for order, box in enumerate(dets.scenes[scene]):
            if box.category == category:
                pool.append((-box.score, scene, order, box))
    pool.sort(key=lambda rec: rec[:3])

    gt_boxes = {scene: [b for b in boxes if b.category == category]
                for scene, boxes in gts.scenes.items()}
    npos = sum(len(v) for v in gt_boxes.values())
    matched = {scene: [False] * len(boxes) for scene, boxes in gt_boxes.items()}

    tp = np.zeros(len(pool), dtype=bool)
    for i, (_, scene, _, det) in enumerate(pool):
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gt_boxes.get(scene, [])):
            if matched.get(scene, [])[j]:
                continue
            value = iou(det, gt)
            if value > best_iou:
                best_iou, best_j = value, j
        if best_j >= 0 and best_iou >= iou_thresh:
            tp[i] = True
            matched[scene][best_j] = True
    return tp, ~tp, npos


def average_precision(dets: DetectionSet, gts: GroundTruthSet, category: str,
                      iou_thresh: float = 0.25, rotated: bool = True) -> float | None:
    """All-points-interpolated AP for one category; None when undefined.

    AP is undefined when the ground truth contains no box of the
    category: there is no recall axis to integrate over. Detections with
    no ground truth at all therefore return None, while a category with
    ground truth but no detections scores 0.
    """
    if not (0.0 < iou_thresh <= 1.0):
        raise InvalidArgumentError(f"iou_thresh must lie in (0, 1], got {iou_thresh}")
    tp, fp, npos = _match_category(dets, gts, category, iou_thresh, rotated)
    if npos == 0:
        return None
    if len(tp) == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(fp)
    recall = cum_tp / npos
    precision = cum_tp / (cum_tp + cum_fp)

    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    jumps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[jumps + 1] - mrec[jumps]) * mpre[jumps + 1]))


@dataclass(frozen=True)
class MeanAPResult:
    per_class: dict[str, float | None]
    mean_ap: float
    undefined: tuple[str, ...]


def mean_ap(dets: DetectionSet, gts: GroundTruthSet,
            categories: list[str] | None = None,
            iou_thresh: float = 0.25, rotated: bool = True) -> MeanAPResult:
    """Mean AP over categories with defined AP; the rest are reported.

    With categories=None the union of categories present in either set is
    evaluated, sorted for reproducibility.
    """
    if categories is None:
        seen = {b.category for boxes in gts.scenes.values() for b in boxes}
        seen |= {b.category for boxes in dets.scenes.values() for b in boxes}
        categories = sorted(seen)
    if not categories:
        raise NoDataError("no categories to evaluate")
    per_class = {c: average_precision(dets, gts, c, iou_thresh, rotated)
                 for c in categories}
    defined = [v for v in per_class.values() if v is not None]
    if not defined:
        raise NoDataError("AP is undefined for every category (empty ground truth)")
    undefined = tuple(c for c, v in per_class.items() if v is None)
    return MeanAPResult(per_class=per_class,
                        mean_ap=float(np.mean(defined)),
                        undefined=undefined)


@dataclass(frozen=True)
class KdeCurve:
    """Gaussian KDE sampled on a regular grid."""

    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def peak_x(self) -> float:
        return float(self.grid[int(np.argmax(self.density))])


def _silverman(samples: np.ndarray) -> float:
    x = samples
    if np.ptp(x) == 0.0:
        return max(1e-3, abs(float(x[0])) * 1e-3)
    sigma = float(x.std(ddof=1))
    iqr = float(np.percentile(x, 75) - np.percentile(x, 25))
    scale = min(sigma, iqr / 1.34) if iqr > 0 else sigma
    return 0.9 * scale * len(x) ** (-1 / 5)


def kde(samples, bandwidth: float | None = None) -> KdeCurve:
    """Gaussian kernel density on a 512-point grid over [min-5h, max+5h].

    f(x) = (1 / (n h)) * sum_i phi((x - x_i) / h) with the standard
    normal phi. bandwidth=None selects Silverman's rule,
    0.9 * min(sigma, IQR/1.34) * n^(-1/5); a sample set with zero spread
    falls back to max(1e-3, |x| * 1e-3). The grid samples the interval
    half-open so that a lone sample sits exactly on a grid node.
    """
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise NoDataError("kde needs at least one sample")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("kde samples must be finite")
    if bandwidth is None:
        h = _silverman(x)
    else:
        h = float(bandwidth)
        if not (h > 0 and math.isfinite(h)):
            raise InvalidArgumentError(f"bandwidth must be positive, got {bandwidth}")
    lo = x.min() - 5.0 * h
    hi = x.max() + 5.0 * h
    grid = lo + (hi - lo) * np.arange(GRID_SIZE) / GRID_SIZE
    z = (grid[:, None] - x[None, :]) / h
    density = np.exp(-0.5 * z * z).sum(axis=1) / (x.size * h * math.sqrt(2 * math.pi))
    return KdeCurve(grid=grid, density=density, bandwidth=h)


@dataclass(frozen=True)
class RatioReport:
    """Per-category volume-ratio samples and their KDE curves.

    entries preserve ranking order (most instances first); skipped counts
    boxes that had no usable reference, keyed by reason.
    """

    entries: dict[str, tuple[tuple[float, ...], KdeCurve]]
    skipped: dict[str, int] = field(default_factory=dict)


def _ratio_samples_priors(boxes: list[Box3D], refs: SizePriorDB,
                          skipped: dict[str, int]) -> dict[str, list[float]]:
    samples: dict[str, list[float]] = {}
    for box in boxes:
        prior = refs.get(box.category)
        if prior is None:
            skipped["unknown-category"] = skipped.get("unknown-category", 0) + 1
            continue
        r = box.volume / (prior[0] * prior[1] * prior[2])
        samples.setdefault(box.category, []).append(r)
    return samples


def _ratio_samples_gt(dets: DetectionSet, refs: GroundTruthSet,
                      skipped: dict[str, int]) -> dict[str, list[float]]:
    samples: dict[str, list[float]] = {}
    for scene, boxes in dets.scenes.items():
        gt_list = list(refs.scenes.get(scene, ()))
        matched = [False] * len(gt_list)
        order = sorted(range(len(boxes)),
                       key=lambda i: (-(boxes[i].score or 0.0), i))
        for i in order:
            det = boxes[i]
            best_iou, best_j = 0.0, -1
            for j, gt in enumerate(gt_list):
                if matched[j] or gt.category != det.category:
                    continue
                value = iou3d(det, gt)
                if value > best_iou:
                    best_iou, best_j = value, j
            if best_j < 0:
                skipped["unmatched"] = skipped.get("unmatched", 0) + 1
                continue
            matched[best_j] = True
            gt = gt_list[best_j]
            samples.setdefault(det.category, []).append(det.volume / gt.volume)
    return samples


def ratio_report(boxes, refs, top_k: int = 10) -> RatioReport:
    """Volume-ratio KDE per category, for the top_k most frequent ones.

    `boxes` with a SizePriorDB reference may be a flat list of Box3D (or
    a DetectionSet, which is flattened); volumes are compared against the
    category prior. With a GroundTruthSet reference, `boxes` must be a
    DetectionSet and each detection is compared against the ground-truth
    box it greedily matches (best IoU, score order, no threshold).
    Categories are ranked by sample count, ties alphabetically.
    """
    if top_k < 1:
        raise InvalidArgumentError(f"top_k must be >= 1, got {top_k}")
    skipped: dict[str, int] = {}
    if isinstance(refs, SizePriorDB):
        if isinstance(boxes, DetectionSet):
            flat = [b for scene in sorted(boxes.scenes) for b in boxes.scenes[scene]]
        else:
            flat = list(boxes)
        samples = _ratio_samples_priors(flat, refs, skipped)
    elif isinstance(refs, GroundTruthSet):
        if not isinstance(boxes, DetectionSet):
            raise InvalidArgumentError(
                "ground-truth references require a DetectionSet of boxes")
        samples = _ratio_samples_gt(boxes, refs, skipped)
    else:
        raise InvalidArgumentError(
            f"refs must be SizePriorDB or GroundTruthSet, got {type(refs).__name__}")
    if not samples:
        raise NoDataError("no volume ratios could be computed")
    ranked = sorted(samples, key=lambda c: (-len(samples[c]), c))[:top_k]
    entries = {c: (tuple(samples[c]), kde(samples[c])) for c in ranked}
    return RatioReport(entries=entries, skipped=skipped)
