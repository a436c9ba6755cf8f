"""BEV rotated-box geometry, NMS, and KITTI-style average precision.

Boxes live in the bird's-eye-view (x, z) plane as center/size/yaw
rectangles.  Intersection areas come from Sutherland-Hodgman polygon
clipping plus the shoelace formula.  Evaluation follows the interpolated-AP
protocol: greedy score-ordered matching against unmatched ground truth,
difficulty binning by 2D box height / occlusion / truncation, and the
11-point or 40-point recall grids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .kitti_io import DONT_CARE

DIFFICULTY_TABLE = {
    # name: (min 2D box height px, max occlusion, max truncation)
    "easy": (40.0, 0, 0.15),
    "moderate": (25.0, 1, 0.30),
    "hard": (25.0, 2, 0.50),
}
_DIFFICULTY_RANK = {"easy": 0, "moderate": 1, "hard": 2}
DONT_CARE_OVERLAP = 0.5  # intersection / detection-area for discard


@dataclass(frozen=True)
class OrientedBox:
    """A BEV rectangle: center (x, z), side lengths, yaw about vertical."""

    cx: float
    cz: float
    length: float
    width: float
    yaw: float = 0.0

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValidationError(f"box sides must be positive, got {self.length} x {self.width}")

    def corners(self) -> np.ndarray:
        """The 4 corners in counterclockwise order, shape (4, 2)."""
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        half = np.array([
            [self.length / 2, self.width / 2],
            [-self.length / 2, self.width / 2],
            [-self.length / 2, -self.width / 2],
            [self.length / 2, -self.width / 2],
        ])
        rot = np.array([[c, -s], [s, c]])
        return half @ rot.T + np.array([self.cx, self.cz])


def box_from_object(obj) -> OrientedBox:
    """BEV footprint of a KITTI-style object (center x/z, dims l x w, yaw)."""
    h, w, l = obj.dimensions
    return OrientedBox(cx=obj.location[0], cz=obj.location[2], length=l, width=w, yaw=obj.rotation_y)


def polygon_area(poly) -> float:
    """Absolute shoelace area of a vertex list."""
    if len(poly) < 3:
        return 0.0
    p = np.asarray(poly, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))) / 2.0


def _clip_polygon(subject, clip) -> list:
    """Sutherland-Hodgman: clip a polygon by a convex CCW polygon."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            return []
        ax, az = clip[i]
        bx, bz = clip[(i + 1) % n]
        ex, ez = bx - ax, bz - az
        inputs = output
        output = []
        prev = inputs[-1]
        prev_in = ex * (prev[1] - az) - ez * (prev[0] - ax) >= 0
        for cur in inputs:
            cur_in = ex * (cur[1] - az) - ez * (cur[0] - ax) >= 0
            if cur_in != prev_in:
                # edge crosses the clip line: add the intersection point
                dx, dz = cur[0] - prev[0], cur[1] - prev[1]
                denom = ex * dz - ez * dx
                t = (ez * (prev[0] - ax) - ex * (prev[1] - az)) / denom
                output.append((prev[0] + t * dx, prev[1] + t * dz))
            if cur_in:
                output.append(cur)
            prev, prev_in = cur, cur_in
    return output


def rotated_iou(a: OrientedBox, b: OrientedBox) -> float:
    """Intersection-over-union of two BEV rectangles, in [0, 1]."""
    ca, cb = a.corners(), b.corners()
    inter = polygon_area(_clip_polygon(ca, cb))
    union = polygon_area(ca) + polygon_area(cb) - inter
    if union <= 0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def nms_indices(boxes, scores, iou_thr: float) -> list:
    """Greedy NMS: indices kept, in descending-score processing order.

    Repeatedly keeps the highest-score remaining box and suppresses all
    remaining boxes whose IoU with it exceeds iou_thr (strictly).  Score
    ties break toward earlier input position.
    """
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept = []
    alive = [True] * len(boxes)
    for i in order:
        if not alive[i]:
            continue
        kept.append(i)
        alive[i] = False
        for j in order:
            if alive[j] and rotated_iou(boxes[i], boxes[j]) > iou_thr:
                alive[j] = False
    return kept


def nms(dets: list, iou_thr: float) -> list:
    """Greedy NMS over detections carrying KITTI geometry."""
    boxes = [box_from_object(d) for d in dets]
    scores = [d.score for d in dets]
    return [dets[i] for i in nms_indices(boxes, scores, iou_thr)]


def assign_difficulty(gt) -> str:
    """Bin a ground-truth object: easy, moderate, hard, or ignored."""
    if gt.label == DONT_CARE:
        return "ignored"
    height = gt.bbox_height
    for name, (h_min, occ_max, tr_max) in DIFFICULTY_TABLE.items():
        if height >= h_min and gt.occlusion <= occ_max and gt.truncation <= tr_max:
            return name
    return "ignored"


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    recall_points: int = 11
    difficulty: str = "moderate"

    def __post_init__(self):
        if not 0 < self.iou_threshold <= 1:
            raise ValidationError(f"iou_threshold {self.iou_threshold} outside (0, 1]")
        if self.recall_points not in (11, 40):
            raise ValidationError(f"recall_points must be 11 or 40, got {self.recall_points}")
        if self.difficulty not in _DIFFICULTY_RANK:
            raise ValidationError(f"unknown difficulty {self.difficulty!r}")


@dataclass
class EvalReport:
    ap: float | None
    n_tp: int
    n_fp: int
    bucket_ap: dict = field(default_factory=dict)


def _split_gts(gts, difficulty, bucket=None):
    """Partition GT indices into counted / ignored / DontCare groups.

    difficulty None counts every non-DontCare object.  A (z_lo, z_hi)
    bucket demotes out-of-bucket objects to ignored.
    """
    counted, ignored, dontcare = [], [], []
    max_rank = None if difficulty is None else _DIFFICULTY_RANK[difficulty]
    for i, gt in enumerate(gts):
        if gt.label == DONT_CARE:
            dontcare.append(i)
            continue
        ok = True
        if max_rank is not None:
            rank = _DIFFICULTY_RANK.get(assign_difficulty(gt))
            ok = rank is not None and rank <= max_rank
        if ok and bucket is not None:
            ok = bucket[0] <= gt.location[2] < bucket[1]
        (counted if ok else ignored).append(i)
    return counted, ignored, dontcare


def _bbox2d_overlap_frac(det, gt) -> float:
    """2D intersection area over the detection's own 2D box area."""
    dl, dt, dr, db = det.bbox2d
    gl, gt_, gr, gb = gt.bbox2d
    iw = min(dr, gr) - max(dl, gl)
    ih = min(db, gb) - max(dt, gt_)
    if iw <= 0 or ih <= 0:
        return 0.0
    return (iw * ih) / ((dr - dl) * (db - dt))


def _greedy_match(dets, gts, iou_thr, counted, ignored, dontcare):
    """Outcome per detection ('tp' | 'fp' | 'discard'), in input order.

    Detections are processed in descending score (ties by input order);
    each counted GT matches at most once.  Detections whose best match is
    an ignored GT, or which overlap a DontCare region, are discarded.
    """
    det_boxes = [box_from_object(d) for d in dets]
    gt_boxes = {i: box_from_object(gts[i]) for i in counted + ignored}
    outcomes = [None] * len(dets)
    unmatched = set(counted)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    for i in order:
        best_iou, best_gt = 0.0, None
        for g in unmatched:
            iou = rotated_iou(det_boxes[i], gt_boxes[g])
            if iou > best_iou:
                best_iou, best_gt = iou, g
        if best_gt is not None and best_iou >= iou_thr:
            outcomes[i] = "tp"
            unmatched.discard(best_gt)
            continue
        if any(rotated_iou(det_boxes[i], gt_boxes[g]) >= iou_thr for g in ignored):
            outcomes[i] = "discard"
            continue
        if any(_bbox2d_overlap_frac(dets[i], gts[g]) >= DONT_CARE_OVERLAP for g in dontcare):
            outcomes[i] = "discard"
            continue
        outcomes[i] = "fp"
    return outcomes


def _recall_points(n: int) -> np.ndarray:
    if n == 11:
        return np.linspace(0.0, 1.0, 11)
    return np.arange(1, 41) / 40.0


def _interpolated_ap(scored, n_gt, n_points) -> float:
    """Mean of max-precision-at-recall>=r over the fixed recall grid.

    ``scored`` is a list of (score, frame, order, is_tp) already filtered
    to non-discarded detections.
    """
    scored = sorted(scored, key=lambda t: (-t[0], t[1], t[2]))
    tp = np.cumsum([1 if s[3] else 0 for s in scored])
    fp = np.cumsum([0 if s[3] else 1 for s in scored])
    recalls = tp / n_gt
    precisions = tp / np.maximum(tp + fp, 1)
    total = 0.0
    for r in _recall_points(n_points):
        at_least = precisions[recalls >= r - 1e-12] if len(scored) else np.array([])
        total += float(at_least.max()) if at_least.size else 0.0
    return total / n_points


def evaluate_frames(frames, cfg: EvalConfig, bucket=None) -> EvalReport:
    """Pooled AP over (detections, ground-truths) frame pairs."""
    scored = []
    n_gt = 0
    n_tp = n_fp = 0
    for f, (dets, gts) in enumerate(frames):
        counted, ignored, dontcare = _split_gts(gts, cfg.difficulty, bucket)
        n_gt += len(counted)
        outcomes = _greedy_match(dets, gts, cfg.iou_threshold, counted, ignored, dontcare)
        for i, out in enumerate(outcomes):
            if out == "discard":
                continue
            scored.append((dets[i].score, f, i, out == "tp"))
            n_tp += out == "tp"
            n_fp += out == "fp"
    if n_gt == 0:
        return EvalReport(ap=None, n_tp=n_tp, n_fp=n_fp)
    return EvalReport(ap=_interpolated_ap(scored, n_gt, cfg.recall_points), n_tp=n_tp, n_fp=n_fp)


def average_precision(dets, gts, cfg: EvalConfig) -> EvalReport:
    """Single-frame convenience wrapper around evaluate_frames."""
    return evaluate_frames([(dets, gts)], cfg)


def tp_fp_counts(dets, gts, iou_star: float) -> tuple:
    """Greedy TP/FP counts at threshold iou_star, ignoring difficulty."""
    counted, ignored, dontcare = _split_gts(gts, None)
    outcomes = _greedy_match(dets, gts, iou_star, counted, ignored, dontcare)
    n_tp = sum(o == "tp" for o in outcomes)
    n_fp = sum(o == "fp" for o in outcomes)
    return (n_tp, n_fp)


def bucket_label(bucket) -> str:
    return f"{bucket[0]:g}_{bucket[1]:g}"


def distance_bucket_eval(frames, buckets, cfg: EvalConfig) -> dict:
    """Per-bucket AP with out-of-bucket ground truths treated as ignored.

    ``buckets`` is an ordered list of disjoint (z_lo, z_hi) ranges;
    returns {label: EvalReport}.
    """
    prev_hi = None
    for lo, hi in buckets:
        if not lo < hi:
            raise ValidationError(f"bucket ({lo}, {hi}) is not well-ordered")
        if prev_hi is not None and lo < prev_hi:
            raise ValidationError("buckets must be disjoint and ordered")
        prev_hi = hi
    return {bucket_label(b): evaluate_frames(frames, cfg, bucket=b) for b in buckets}


def format_report(report: EvalReport, buckets: dict | None = None) -> str:
    """Line-oriented key=value rendering of an evaluation report."""
    def fmt(ap):
        return "absent" if ap is None else "%.6f" % ap

    lines = [f"ap={fmt(report.ap)}", f"n_tp={report.n_tp}", f"n_fp={report.n_fp}"]
    for label, rep in (buckets or {}).items():
        lines.append(f"bucket_{label}_ap={fmt(rep.ap)}")
    return "\n".join(lines) + "\n"
