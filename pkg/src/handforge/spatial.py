"""Frame-local rejection: confidence gates, bone lengths, hand area, hand count."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .config import FilterConfig
from .core import (
    BONES,
    Detection,
    FrameCandidates,
    HandPose,
    area_fraction,
    bone_length,
)

LOW_DETECTION_CONFIDENCE = "low-detection-confidence"
LOW_POSE_SCORE = "low-pose-score"
BONE_TOO_LONG = "bone-too-long"
AREA_TOO_LARGE = "area-too-large"
AREA_TOO_SMALL = "area-too-small"
EXCESS_HAND = "excess-hand"
FRAME_UNDERCOUNT = "frame-undercount"
BBOX_VELOCITY = "bbox-velocity"
KEYPOINT_VELOCITY = "keypoint-velocity"

REASONS = (
    LOW_DETECTION_CONFIDENCE, LOW_POSE_SCORE, BONE_TOO_LONG, AREA_TOO_LARGE,
    AREA_TOO_SMALL, EXCESS_HAND, FRAME_UNDERCOUNT, BBOX_VELOCITY, KEYPOINT_VELOCITY,
)

WHOLE_FRAME = None


@dataclass(frozen=True)
class RejectionRecord:
    """Why something was removed.

    ``detection_index`` is the position in the frame as it was read, or
    ``None`` when the whole frame is dropped. ``keypoint`` is set only for
    single-keypoint invalidations by the velocity check.
    """

    frame_id: int
    detection_index: Optional[int]
    reason: str
    measured_value: float
    threshold: float
    bone: Optional[tuple[int, int]] = None
    keypoint: Optional[int] = None

    def to_dict(self) -> dict:
        out = {
            "frame_id": self.frame_id,
            "detection_index": self.detection_index,
            "reason": self.reason,
            "measured_value": self.measured_value,
            "threshold": self.threshold,
        }
        if self.bone is not None:
            out["bone"] = list(self.bone)
        if self.keypoint is not None:
            out["keypoint"] = self.keypoint
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RejectionRecord":
        return cls(
            frame_id=d["frame_id"],
            detection_index=d["detection_index"],
            reason=d["reason"],
            measured_value=d["measured_value"],
            threshold=d["threshold"],
            bone=tuple(d["bone"]) if d.get("bone") is not None else None,
            keypoint=d.get("keypoint"),
        )


@dataclass(frozen=True)
class Failure:
    reason: str
    measured: float
    threshold: float
    bone: Optional[tuple[int, int]] = None


@dataclass(frozen=True)
class SpatialResult:
    """``frame`` is None when the whole frame was dropped."""

    frame: Optional[FrameCandidates]
    rejections: tuple[RejectionRecord, ...]
    # original detection index of every surviving detection
    kept_indices: tuple[int, ...] = ()

    @property
    def dropped(self) -> bool:
        return self.frame is None


def histogram(records: Iterable[RejectionRecord]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for rec in records:
        counts[rec.reason] = counts.get(rec.reason, 0) + 1
    return dict(sorted(counts.items()))


def _gate_pose(pose: HandPose, c_pe: float) -> HandPose:
    return pose.with_keypoints(
        kp if (not kp.valid or kp.confidence >= c_pe) else kp.invalidated()
        for kp in pose.keypoints
    )


def _gate(frame: FrameCandidates, indices: Sequence[int], cfg: FilterConfig):
    kept, kept_idx, records = [], [], []
    for idx, det in zip(indices, frame.detections):
        if det.bbox.score < cfg.c_hd:
            records.append(RejectionRecord(
                frame.frame_id, idx, LOW_DETECTION_CONFIDENCE, det.bbox.score, cfg.c_hd))
            continue
        if det.pose is None:
            records.append(RejectionRecord(frame.frame_id, idx, LOW_POSE_SCORE, 0.0, cfg.c_pe))
            continue
        # pose score is taken before keypoint invalidation; afterwards every
        # surviving keypoint is >= c_pe, which would make the gate vacuous
        score = det.pose.score
        if det.pose.num_valid == 0 or score < cfg.c_pe:
            records.append(RejectionRecord(frame.frame_id, idx, LOW_POSE_SCORE, score, cfg.c_pe))
            continue
        kept.append(Detection(det.bbox, _gate_pose(det.pose, cfg.c_pe), det.interpolated))
        kept_idx.append(idx)
    return frame.with_detections(kept), kept_idx, records


def gate_confidence(frame: FrameCandidates, cfg: FilterConfig):
    """Drop low-confidence boxes and poses, invalidate low-confidence keypoints.

    Returns ``(frame, rejections)``.
    """
    out, _, records = _gate(frame, range(len(frame.detections)), cfg)
    return out, records


def check_bones(pose: HandPose, cfg: FilterConfig) -> Optional[Failure]:
    """First bone longer than its bound, or None. Bones with a missing end are skipped."""
    for bone in BONES:
        length = bone_length(pose, bone)
        if length is None:
            continue
        bound = cfg.bone_bound(bone)
        if length > bound:
            return Failure(BONE_TOO_LONG, length, bound, bone)
    return None


def check_area(det: Detection, frame: FrameCandidates, cfg: FilterConfig) -> Optional[Failure]:
    f = area_fraction(det.bbox, frame)
    if f > cfg.s_area_max:
        return Failure(AREA_TOO_LARGE, f, cfg.s_area_max)
    if f < cfg.s_area_min:
        return Failure(AREA_TOO_SMALL, f, cfg.s_area_min)
    return None


def _enforce_count(frame: FrameCandidates, indices: Sequence[int], cfg: FilterConfig):
    n = len(frame.detections)
    if n < cfg.s_count:
        return None, (), [RejectionRecord(frame.frame_id, WHOLE_FRAME, FRAME_UNDERCOUNT, n, cfg.s_count)]
    if n == cfg.s_count:
        return frame, tuple(indices), []
    order = sorted(range(n), key=lambda i: (-frame.detections[i].bbox.score, i))
    keep = sorted(order[: cfg.s_count])
    cutoff = frame.detections[order[cfg.s_count - 1]].bbox.score
    records = [
        RejectionRecord(frame.frame_id, indices[i], EXCESS_HAND, frame.detections[i].bbox.score, cutoff)
        for i in sorted(order[cfg.s_count:])
    ]
    return (
        frame.with_detections(frame.detections[i] for i in keep),
        tuple(indices[i] for i in keep),
        records,
    )


def enforce_count(frame: FrameCandidates, cfg: FilterConfig):
    """Keep the ``s_count`` most confident hands; drop the frame if there are fewer.

    Returns ``(frame_or_None, rejections)``. For excess hands the recorded
    threshold is the lowest score that was kept.
    """
    out, _, records = _enforce_count(frame, range(len(frame.detections)), cfg)
    return out, records


def spatial_filter(frame: FrameCandidates, cfg: FilterConfig) -> SpatialResult:
    gated, indices, records = _gate(frame, range(len(frame.detections)), cfg)

    survivors, surv_idx = list(gated.detections), list(indices)
    for check in (lambda d: check_bones(d.pose, cfg), lambda d: check_area(d, gated, cfg)):
        passed, passed_idx = [], []
        for idx, det in zip(surv_idx, survivors):
            fail = check(det)
            if fail is not None:
                records.append(RejectionRecord(
                    frame.frame_id, idx, fail.reason, fail.measured, fail.threshold, bone=fail.bone))
            else:
                passed.append(det)
                passed_idx.append(idx)
        survivors, surv_idx = passed, passed_idx

    out, kept_idx, count_records = _enforce_count(gated.with_detections(survivors), surv_idx, cfg)
    records.extend(count_records)
    return SpatialResult(out, tuple(records), tuple(kept_idx))


def spatial_filter_all(
    frames: Sequence[FrameCandidates], cfg: FilterConfig, workers: int = 1
) -> list[SpatialResult]:
    """Filter many frames; the result order never depends on ``workers``."""
    if workers <= 1 or len(frames) < 256:
        return [spatial_filter(f, cfg) for f in frames]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunk = max(1, len(frames) // (workers * 4))
        return list(pool.map(spatial_filter, frames, [cfg] * len(frames), chunksize=chunk))
