"""Domain types shared by every stage: keypoints, hand poses, boxes, frames.

All values are immutable. Stages produce modified copies through
``dataclasses.replace`` or the small ``with_*`` helpers below.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

NUM_KEYPOINTS = 21

KEYPOINT_NAMES = (
    "wrist",
    "thumb_cmc", "thumb_mcp", "thumb_ip", "thumb_tip",
    "index_mcp", "index_pip", "index_dip", "index_tip",
    "middle_mcp", "middle_pip", "middle_dip", "middle_tip",
    "ring_mcp", "ring_pip", "ring_dip", "ring_tip",
    "pinky_mcp", "pinky_pip", "pinky_dip", "pinky_tip",
)

# (parent, child) pairs, wrist-rooted tree, thumb first.
BONES: tuple[tuple[int, int], ...] = tuple(
    pair
    for base in (1, 5, 9, 13, 17)
    for pair in ((0, base), (base, base + 1), (base + 1, base + 2), (base + 2, base + 3))
)
REFERENCE_BONE: tuple[int, int] = (5, 6)


class ValidationError(ValueError):
    """Raised when a value violates a domain invariant."""


@dataclass(frozen=True)
class SkeletonTopology:
    bones: tuple[tuple[int, int], ...] = BONES
    reference_bone: int = BONES.index(REFERENCE_BONE)

    @property
    def reference(self) -> tuple[int, int]:
        return self.bones[self.reference_bone]


SKELETON = SkeletonTopology()


@dataclass(frozen=True)
class Keypoint:
    x: float = 0.0
    y: float = 0.0
    confidence: float = 0.0
    valid: bool = True
    interpolated: bool = False

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"keypoint confidence {self.confidence} outside [0, 1]")

    @classmethod
    def missing(cls) -> "Keypoint":
        return cls(0.0, 0.0, 0.0, valid=False)

    def invalidated(self) -> "Keypoint":
        return Keypoint.missing()


@dataclass(frozen=True)
class HandPose:
    keypoints: tuple[Keypoint, ...]

    def __post_init__(self):
        if not isinstance(self.keypoints, tuple):
            object.__setattr__(self, "keypoints", tuple(self.keypoints))
        if len(self.keypoints) != NUM_KEYPOINTS:
            raise ValidationError(
                f"hand pose needs {NUM_KEYPOINTS} keypoints, got {len(self.keypoints)}"
            )

    @property
    def score(self) -> float:
        """Mean confidence of the valid keypoints, 0.0 when none are valid."""
        confs = [kp.confidence for kp in self.keypoints if kp.valid]
        return sum(confs) / len(confs) if confs else 0.0

    @property
    def num_valid(self) -> int:
        return sum(kp.valid for kp in self.keypoints)

    def with_keypoints(self, keypoints: Sequence[Keypoint]) -> "HandPose":
        return HandPose(tuple(keypoints))


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float
    score: float = 1.0

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValidationError(
                f"degenerate box ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"box score {self.score} outside [0, 1]")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def corners(self) -> tuple[tuple[float, float], ...]:
        """All four corners, clockwise from top-left."""
        return ((self.x1, self.y1), (self.x2, self.y1), (self.x2, self.y2), (self.x1, self.y2))


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    pose: Optional[HandPose] = None
    interpolated: bool = False


@dataclass(frozen=True)
class FrameCandidates:
    frame_id: int
    timestamp_ms: int
    image_width: int
    image_height: int
    image_path: str = ""
    detections: tuple[Detection, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not isinstance(self.detections, tuple):
            object.__setattr__(self, "detections", tuple(self.detections))
        if self.frame_id < 0 or self.timestamp_ms < 0:
            raise ValidationError(f"frame {self.frame_id}: negative frame id or timestamp")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValidationError(
                f"frame {self.frame_id}: image size {self.image_width}x{self.image_height}"
            )

    @property
    def image_area(self) -> int:
        return self.image_width * self.image_height

    def with_detections(self, detections: Sequence[Detection]) -> "FrameCandidates":
        return replace(self, detections=tuple(detections))

    def check_keypoints_in_bounds(self) -> None:
        for i, det in enumerate(self.detections):
            if det.pose is None:
                continue
            for j, kp in enumerate(det.pose.keypoints):
                if kp.valid and not (
                    0.0 <= kp.x <= self.image_width and 0.0 <= kp.y <= self.image_height
                ):
                    raise ValidationError(
                        f"frame {self.frame_id}: detection {i} keypoint {j} "
                        f"({kp.x}, {kp.y}) outside image"
                    )


def bone_length(pose: HandPose, bone: tuple[int, int]) -> Optional[float]:
    """Pixel length of ``bone``, or None when either endpoint is invalid."""
    a, b = pose.keypoints[bone[0]], pose.keypoints[bone[1]]
    if not (a.valid and b.valid):
        return None
    return math.hypot(b.x - a.x, b.y - a.y)


def clip_box(box: BBox, width: float, height: float) -> Optional[tuple[float, float, float, float]]:
    x1, y1 = max(box.x1, 0.0), max(box.y1, 0.0)
    x2, y2 = min(box.x2, float(width)), min(box.y2, float(height))
    if x2 <= x1 or y2 <= y1:
        return None
    return x1, y1, x2, y2


def _raw_iou(a, b) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def iou(a: BBox, b: BBox, bounds: Optional[tuple[float, float]] = None) -> float:
    """Intersection over union.

    With ``bounds=(width, height)`` both boxes are clipped to the image first;
    a box that falls entirely outside the image has IoU 0 with everything.
    """
    if bounds is None:
        return _raw_iou((a.x1, a.y1, a.x2, a.y2), (b.x1, b.y1, b.x2, b.y2))
    ca, cb = clip_box(a, *bounds), clip_box(b, *bounds)
    if ca is None or cb is None:
        return 0.0
    return _raw_iou(ca, cb)


def area_fraction(bbox: BBox, frame: FrameCandidates) -> float:
    if frame.image_area <= 0:
        raise ValidationError(f"frame {frame.frame_id} has zero image area")
    clipped = clip_box(bbox, frame.image_width, frame.image_height)
    if clipped is None:
        return 0.0
    x1, y1, x2, y2 = clipped
    return (x2 - x1) * (y2 - y1) / frame.image_area
