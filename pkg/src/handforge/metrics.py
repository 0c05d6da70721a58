"""Detection and pose evaluation: IoU matching, precision/recall sweeps, PCK, AUC."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .config import FilterConfig
from .core import BBox, FrameCandidates, HandPose, iou
from .spatial import gate_confidence

DEFAULT_CONF_GRID = tuple(round(0.05 * i, 2) for i in range(20))
DEFAULT_PCK_GRID = tuple(float(t) for t in np.linspace(0.01, 0.5, 50))


class UndefinedMetric(ValueError):
    pass


@dataclass
class MatchResult:
    """One-to-one assignment of predictions to ground truth.

    ``pred_match[i]`` is the matched gt index of prediction ``i`` or None,
    ``pred_iou[i]`` the IoU of that match (0.0 if unmatched).
    """

    pred_match: list[Optional[int]]
    pred_iou: list[float]
    pred_conf: list[float]
    gt_covered: list[bool]

    @property
    def tp(self) -> int:
        return sum(m is not None for m in self.pred_match)

    @property
    def fp(self) -> int:
        return len(self.pred_match) - self.tp

    @property
    def fn(self) -> int:
        return len(self.gt_covered) - sum(self.gt_covered)

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, g) for i, g in enumerate(self.pred_match) if g is not None]


@dataclass
class PRCurve:
    points: list[tuple[float, float, float]] = field(default_factory=list)

    @property
    def thresholds(self) -> list[float]:
        return [p[0] for p in self.points]

    @property
    def precision(self) -> list[float]:
        return [p[1] for p in self.points]

    @property
    def recall(self) -> list[float]:
        return [p[2] for p in self.points]

    def to_list(self) -> list[dict]:
        return [{"threshold": t, "precision": p, "recall": r} for t, p, r in self.points]


def match_detections(
    preds: Sequence[BBox],
    gts: Sequence[BBox],
    iou_threshold: float,
    bounds: Optional[tuple[float, float]] = None,
) -> MatchResult:
    """Greedy matching in descending prediction confidence.

    Each prediction takes the still-unmatched ground truth of highest IoU
    if that IoU reaches the threshold. Ties go to the earlier prediction /
    the lower gt index.
    """
    n = len(preds)
    order = sorted(range(n), key=lambda i: (-preds[i].score, i))
    match: list[Optional[int]] = [None] * n
    ious = [0.0] * n
    covered = [False] * len(gts)
    for i in order:
        best, best_iou = None, -1.0
        for g, gt in enumerate(gts):
            if covered[g]:
                continue
            o = iou(preds[i], gt, bounds)
            if o > best_iou:
                best, best_iou = g, o
        if best is not None and best_iou >= iou_threshold and best_iou > 0.0:
            match[i], ious[i] = best, best_iou
            covered[best] = True
    return MatchResult(match, ious, [p.score for p in preds], covered)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 1.0


def precision_recall(
    preds: Sequence[Sequence[BBox]],
    gts: Sequence[Sequence[BBox]],
    iou_threshold: float,
    conf_grid: Sequence[float] = DEFAULT_CONF_GRID,
    bounds: Optional[Sequence[tuple[float, float]]] = None,
) -> PRCurve:
    """Precision/recall over a confidence sweep; one box list per frame.

    Precision is 1 when nothing is predicted; recall is 1 when there is
    nothing to find.
    """
    if len(preds) != len(gts):
        raise ValueError("preds and gts must cover the same frames")
    if any(b <= a for a, b in zip(conf_grid, conf_grid[1:])):
        raise ValueError("conf_grid must be strictly increasing")
    if bounds is None:
        bounds = [None] * len(gts)
    matches = [match_detections(p, g, iou_threshold, b) for p, g, b in zip(preds, gts, bounds)]
    n_gt = sum(len(g) for g in gts)
    curve = PRCurve()
    # greedy order is by confidence, so dropping the low-confidence tail never
    # changes earlier matches; one matching per frame serves every threshold
    for t in conf_grid:
        tp = fp = 0
        for m in matches:
            for g, c in zip(m.pred_match, m.pred_conf):
                if c >= t:
                    if g is None:
                        fp += 1
                    else:
                        tp += 1
        curve.points.append((float(t), _ratio(tp, tp + fp), _ratio(tp, n_gt)))
    return curve


def pck(pred: HandPose, gt: HandPose, norm_distance: float, gt_bbox: BBox) -> float:
    """Fraction of valid ground-truth keypoints predicted within
    ``norm_distance`` times the ground-truth box diagonal."""
    radius = norm_distance * gt_bbox.diagonal
    total = hit = 0
    for p, g in zip(pred.keypoints, gt.keypoints):
        if not g.valid:
            continue
        total += 1
        if p.valid and math.hypot(p.x - g.x, p.y - g.y) <= radius:
            hit += 1
    if total == 0:
        raise UndefinedMetric("ground truth pose has no valid keypoints")
    return hit / total


def pck_curve(pairs, grid: Sequence[float] = DEFAULT_PCK_GRID) -> np.ndarray:
    """Mean PCK over ``pairs`` of (pred_pose, gt_pose, gt_bbox) for each threshold."""
    if not pairs:
        raise UndefinedMetric("no pose pairs")
    grid = np.asarray(grid, dtype=float)
    dists, valid, diags = [], [], []
    for pred, gt, box in pairs:
        diags.append(box.diagonal)
        d = np.full(len(gt.keypoints), np.inf)
        mask = np.array([g.valid for g in gt.keypoints])
        if not mask.any():
            raise UndefinedMetric("ground truth pose has no valid keypoints")
        for j, (p, g) in enumerate(zip(pred.keypoints, gt.keypoints)):
            if p.valid and g.valid:
                d[j] = math.hypot(p.x - g.x, p.y - g.y)
        dists.append(d)
        valid.append(mask)
    d, m = np.stack(dists), np.stack(valid)
    # same comparison as pck(): distance against threshold times diagonal
    radius = grid[:, None, None] * np.asarray(diags)[None, :, None]
    hits = (d[None, :, :] <= radius) & m[None, :, :]
    per_pair = hits.sum(axis=2) / m.sum(axis=1)[None, :]
    return per_pair.mean(axis=1)


def auc(pairs, grid: Sequence[float] = DEFAULT_PCK_GRID) -> float:
    grid = np.asarray(grid, dtype=float)
    if len(grid) < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing with at least two points")
    curve = pck_curve(pairs, grid)
    return float(np.trapezoid(curve, grid) / (grid[-1] - grid[0]))


# -- frame-level evaluation -----------------------------------------------------

def _align(pred_frames: Sequence[FrameCandidates], gt_frames: Sequence[FrameCandidates]):
    by_id = {f.frame_id: f for f in pred_frames}
    return [(by_id.get(g.frame_id), g) for g in gt_frames]


def pose_pairs(pred_frames, gt_frames, iou_threshold: float = 0.5):
    """Pose pairs from IoU-matched detections, plus the count of unmatched
    ground-truth hands."""
    pairs, unmatched = [], 0
    for pred, gt in _align(pred_frames, gt_frames):
        p_dets = pred.detections if pred is not None else ()
        m = match_detections([d.bbox for d in p_dets], [d.bbox for d in gt.detections], iou_threshold,
                             (gt.image_width, gt.image_height))
        for i, g in m.pairs():
            pd, gd = p_dets[i], gt.detections[g]
            if pd.pose is not None and gd.pose is not None and gd.pose.num_valid > 0:
                pairs.append((pd.pose, gd.pose, gd.bbox))
            else:
                unmatched += 1
        unmatched += m.fn
    return pairs, unmatched


def evaluate_frames(
    pred_frames: Sequence[FrameCandidates],
    gt_frames: Sequence[FrameCandidates],
    conf_grid: Sequence[float] = DEFAULT_CONF_GRID,
    pck_grid: Sequence[float] = DEFAULT_PCK_GRID,
) -> dict:
    """Metrics report for one prediction stream against ground truth.

    Frames missing from the predictions count as empty predictions.
    """
    aligned = _align(pred_frames, gt_frames)
    preds = [[d.bbox for d in p.detections] if p is not None else [] for p, _ in aligned]
    gts = [[d.bbox for d in g.detections] for _, g in aligned]
    bounds = [(g.image_width, g.image_height) for _, g in aligned]
    report: dict = {"pr_curves": {}}
    for thr in (0.5, 0.75):
        curve = precision_recall(preds, gts, thr, conf_grid, bounds)
        _, p, r = curve.points[0]
        report[f"precision@{thr}"] = p
        report[f"recall@{thr}"] = r
        report["pr_curves"][str(thr)] = curve.to_list()
    pairs, unmatched = pose_pairs(pred_frames, gt_frames, 0.5)
    report["auc"] = auc(pairs, pck_grid) if pairs else 0.0
    report["auc_pairs"] = len(pairs)
    report["auc_unmatched"] = unmatched
    return report


def _pr_at(pred_frames, gt_frames, iou_threshold: float) -> tuple[float, float]:
    aligned = _align(pred_frames, gt_frames)
    preds = [[d.bbox for d in p.detections] if p is not None else [] for p, _ in aligned]
    gts = [[d.bbox for d in g.detections] for _, g in aligned]
    bounds = [(g.image_width, g.image_height) for _, g in aligned]
    _, p, r = precision_recall(preds, gts, iou_threshold, (0.0,), bounds).points[0]
    return p, r


def confidence_sweep(
    pred_frames: Sequence[FrameCandidates],
    gt_frames: Sequence[FrameCandidates],
    cfg: FilterConfig,
    c_hd_values: Sequence[float],
    c_pe_values: Sequence[float],
    iou_threshold: float = 0.75,
    pck_grid: Sequence[float] = DEFAULT_PCK_GRID,
) -> list[dict]:
    """Precision, recall and AUC after gating with every (c_hd, c_pe) pair."""
    rows = []
    for c_hd in c_hd_values:
        for c_pe in c_pe_values:
            gate = replace(cfg, c_hd=c_hd, c_pe=c_pe)
            gated = [gate_confidence(f, gate)[0] for f in pred_frames]
            p, r = _pr_at(gated, gt_frames, iou_threshold)
            pairs, _ = pose_pairs(gated, gt_frames, 0.5)
            rows.append({
                "c_hd": c_hd,
                "c_pe": c_pe,
                "precision": p,
                "recall": r,
                "auc": auc(pairs, pck_grid) if pairs else 0.0,
            })
    return rows
