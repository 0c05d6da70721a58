"""Seeded synthetic hand sequences with a ledger of injected corruption.

Hands are drawn as 21 keypoints whose bone lengths follow the configured
ratio table exactly. Corruption draws a fixed set of random numbers per
frame regardless of the rates, so lowering a rate only ever removes
events (the set of corruptions is nested in the rates).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .config import DEFAULT_BONE_RATIOS, FilterConfig
from .core import (
    BONES,
    NUM_KEYPOINTS,
    BBox,
    Detection,
    FrameCandidates,
    HandPose,
    Keypoint,
    area_fraction,
)

MOTIONS = ("static", "linear", "sinusoidal")

# bone direction in degrees from "up", positive towards +x
_BONE_ANGLES = {
    (0, 1): -55.0, (1, 2): -45.0, (2, 3): -35.0, (3, 4): -30.0,
    (0, 5): -18.0, (5, 6): -13.0, (6, 7): -11.0, (7, 8): -9.0,
    (0, 9): -3.0, (9, 10): -2.0, (10, 11): -2.0, (11, 12): -1.0,
    (0, 13): 10.0, (13, 14): 8.0, (14, 15): 7.0, (15, 16): 6.0,
    (0, 17): 22.0, (17, 18): 18.0, (18, 19): 16.0, (19, 20): 14.0,
}


class SceneError(ValueError):
    """The requested scene cannot be generated (e.g. the hand does not fit)."""


@dataclass(frozen=True)
class SceneSpec:
    n_hands: int = 1
    image_width: int = 256
    image_height: int = 256
    motion: str = "static"
    velocity: tuple[float, float] = (0.0, 0.0)   # px/frame, linear motion
    amplitude: tuple[float, float] = (0.0, 0.0)  # px, sinusoidal motion
    period: float = 60.0                         # frames, sinusoidal motion
    n_frames: int = 10
    base_hand_scale: float = 30.0                # index proximal bone, px
    seed: int = 0
    fps: float = 30.0
    max_rotation_deg: float = 20.0
    box_margin: float = 0.15                     # padding, fraction of scale
    bone_ratios: Mapping[tuple[int, int], float] = field(
        default_factory=lambda: dict(DEFAULT_BONE_RATIOS))

    def __post_init__(self):
        if self.motion not in MOTIONS:
            raise SceneError(f"unknown motion {self.motion!r}")
        if self.n_hands < 1 or self.n_frames < 0:
            raise SceneError("need n_hands >= 1 and n_frames >= 0")
        if self.base_hand_scale <= 0:
            raise SceneError("base_hand_scale must be > 0")


@dataclass(frozen=True)
class CorruptionSpec:
    keypoint_jitter_sigma: float = 0.0
    outlier_rate: float = 0.0
    outlier_magnitude: float = 75.0
    isolated_outliers: bool = False
    dropout_rate: float = 0.0
    false_detection_rate: float = 0.0
    # emitted confidence = clean_confidence - confidence_slope * magnitude / diagonal
    clean_confidence: float = 1.0
    confidence_slope: float = 1.0
    false_score_range: tuple[float, float] = (0.5, 1.0)
    false_confidence_range: tuple[float, float] = (0.2, 0.9)
    false_size_range: tuple[float, float] = (0.2, 0.7)  # fraction of image side
    seed: int = 0

    def __post_init__(self):
        for name in ("outlier_rate", "dropout_rate", "false_detection_rate", "clean_confidence"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.keypoint_jitter_sigma < 0 or self.outlier_magnitude < 0:
            raise ValueError("jitter sigma and outlier magnitude must be >= 0")


def hand_template(scale: float, ratios: Mapping[tuple[int, int], float], rotation: float = 0.0) -> np.ndarray:
    """(21, 2) keypoints relative to the wrist, image axes (y down)."""
    pts = np.zeros((NUM_KEYPOINTS, 2))
    for a, b in BONES:
        theta = math.radians(_BONE_ANGLES[(a, b)]) + rotation
        length = scale * ratios[(a, b)]
        pts[b] = pts[a] + length * np.array([math.sin(theta), -math.cos(theta)])
    return pts


def _offsets(scene: SceneSpec) -> np.ndarray:
    """(n_frames, 2) displacement of every hand relative to frame 0."""
    t = np.arange(scene.n_frames, dtype=float)[:, None]
    if scene.motion == "static":
        return np.zeros((scene.n_frames, 2))
    if scene.motion == "linear":
        return t * np.asarray(scene.velocity, dtype=float)[None, :]
    return np.asarray(scene.amplitude, dtype=float)[None, :] * np.sin(2 * math.pi * t / scene.period)


def _padded_extent(template: np.ndarray, margin: float):
    lo = template.min(axis=0) - margin
    hi = template.max(axis=0) + margin
    return lo, hi


def generate(scene: SceneSpec) -> list[FrameCandidates]:
    """Ground-truth frames: confidence 1 everywhere, boxes padded around the hand."""
    rng = np.random.default_rng(scene.seed)
    offsets = _offsets(scene)
    off_lo = offsets.min(axis=0) if len(offsets) else np.zeros(2)
    off_hi = offsets.max(axis=0) if len(offsets) else np.zeros(2)
    margin = scene.box_margin * scene.base_hand_scale
    slot = scene.image_width / scene.n_hands

    hands = []
    for h in range(scene.n_hands):
        rot = math.radians(rng.uniform(-scene.max_rotation_deg, scene.max_rotation_deg))
        tmpl = hand_template(scene.base_hand_scale, scene.bone_ratios, rot)
        lo, hi = _padded_extent(tmpl, margin)
        x_min = h * slot - lo[0] - off_lo[0]
        x_max = (h + 1) * slot - hi[0] - off_hi[0]
        y_min = -lo[1] - off_lo[1]
        y_max = scene.image_height - hi[1] - off_hi[1]
        if x_min > x_max or y_min > y_max:
            raise SceneError(
                f"hand {h} (extent {hi - lo}) plus motion does not fit in "
                f"{slot:.0f}x{scene.image_height} px"
            )
        wrist = np.array([rng.uniform(x_min, x_max), rng.uniform(y_min, y_max)])
        hands.append((wrist, tmpl, lo, hi))

    frames = []
    for t in range(scene.n_frames):
        dets = []
        for wrist, tmpl, lo, hi in hands:
            origin = wrist + offsets[t]
            pts = origin + tmpl
            box = BBox(*(origin + lo), *(origin + hi), 1.0)
            pose = HandPose(tuple(Keypoint(float(x), float(y), 1.0) for x, y in pts))
            dets.append(Detection(box, pose))
        frames.append(FrameCandidates(
            frame_id=t,
            timestamp_ms=int(round(t * 1000.0 / scene.fps)),
            image_width=scene.image_width,
            image_height=scene.image_height,
            image_path=f"synth/{scene.seed}/{t:06d}.png",
            detections=tuple(dets),
        ))
    return frames


def max_speed(frames: Sequence[FrameCandidates]) -> float:
    """Largest per-frame displacement of any keypoint or box corner (same detection slot)."""
    best = 0.0
    for prev, cur in zip(frames, frames[1:]):
        g = cur.frame_id - prev.frame_id
        for a, b in zip(prev.detections, cur.detections):
            pts_a = list(a.bbox.corners()) + [(k.x, k.y) for k in a.pose.keypoints]
            pts_b = list(b.bbox.corners()) + [(k.x, k.y) for k in b.pose.keypoints]
            for (xa, ya), (xb, yb) in zip(pts_a, pts_b):
                best = max(best, math.hypot(xb - xa, yb - ya) / g)
    return best


def scene_config(scene: SceneSpec, frames: Optional[Sequence[FrameCandidates]] = None, **overrides) -> FilterConfig:
    """A filter configuration the scene's ground truth satisfies."""
    frames = generate(scene) if frames is None else frames
    fracs = [area_fraction(d.bbox, f) for f in frames for d in f.detections] or [0.5]
    kwargs = dict(
        s_bone=scene.base_hand_scale,
        s_area_min=float(min(fracs) * 0.5),
        s_area_max=float(min(1.0, max(fracs) * 1.5)),
        s_count=scene.n_hands,
        t_vmax=float(max(5.0, 2.0 * max_speed(frames))),
        bone_ratios=dict(scene.bone_ratios),
    )
    kwargs.update(overrides)
    return FilterConfig(**kwargs)


# -- corruption ----------------------------------------------------------------

@dataclass
class CorruptionLedger:
    entries: list[dict] = field(default_factory=list)

    def of_kind(self, kind: str) -> list[dict]:
        return [e for e in self.entries if e["kind"] == kind]

    def __len__(self) -> int:
        return len(self.entries)

    def to_json(self) -> str:
        return json.dumps({"entries": self.entries}, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "CorruptionLedger":
        return cls(json.loads(text)["entries"])


def _clip01(v: float) -> float:
    return min(1.0, max(0.0, v))


def _teleport(p: np.ndarray, magnitude: float, angle: float, w: float, h: float) -> np.ndarray:
    for k in range(8):
        a = angle + k * math.pi / 4
        q = p + magnitude * np.array([math.cos(a), math.sin(a)])
        if 0.0 <= q[0] <= w and 0.0 <= q[1] <= h:
            return q
    centre = np.array([w / 2.0, h / 2.0])
    d = centre - p
    n = float(np.hypot(*d))
    q = p + (d / n * magnitude if n > 0 else np.array([magnitude, 0.0]))
    return np.clip(q, [0.0, 0.0], [w, h])


def corrupt(truth: Sequence[FrameCandidates], spec: CorruptionSpec) -> tuple[list[FrameCandidates], CorruptionLedger]:
    """Corrupted candidates plus the exact ledger of what was done to them."""
    ledger = CorruptionLedger()
    out = []
    last_outlier: dict[tuple[int, int], int] = {}
    for frame in truth:
        w, h = frame.image_width, frame.image_height
        diag = math.hypot(w, h)
        rng = np.random.default_rng((spec.seed, frame.frame_id))
        n = len(frame.detections)
        u_drop = rng.random(n)
        kp_noise = rng.standard_normal((n, NUM_KEYPOINTS, 2))
        box_noise = rng.standard_normal((n, 2, 2))
        u_out = rng.random((n, NUM_KEYPOINTS))
        out_angle = rng.random((n, NUM_KEYPOINTS)) * 2 * math.pi
        u_false = rng.random()
        false_geom = rng.random(4)
        false_kp = rng.random((NUM_KEYPOINTS, 2))
        false_conf = rng.random(NUM_KEYPOINTS)
        false_score = rng.random()

        dets = []
        for i, det in enumerate(frame.detections):
            if u_drop[i] < spec.dropout_rate:
                ledger.entries.append({"kind": "dropout", "frame_id": frame.frame_id, "hand": i})
                continue
            idx = len(dets)
            sigma = spec.keypoint_jitter_sigma
            pts = np.array([[k.x, k.y] for k in det.pose.keypoints])
            noisy = np.clip(pts + sigma * kp_noise[i], [0.0, 0.0], [w, h])
            b = det.bbox
            corners = np.array([[b.x1, b.y1], [b.x2, b.y2]]) + sigma * box_noise[i]
            corners = np.clip(corners, [0.0, 0.0], [w, h])
            if sigma > 0:
                ledger.entries.append({
                    "kind": "jitter", "frame_id": frame.frame_id, "hand": i, "detection_index": idx,
                    "keypoint_offsets": (noisy - pts).tolist(),
                    "bbox_offsets": (corners - [[b.x1, b.y1], [b.x2, b.y2]]).tolist(),
                })
            magnitude = np.hypot(*(noisy - pts).T)
            for j in range(NUM_KEYPOINTS):
                if u_out[i, j] >= spec.outlier_rate:
                    continue
                if spec.isolated_outliers:
                    prev = last_outlier.get((i, j))
                    if frame.frame_id == truth[0].frame_id or (prev is not None and frame.frame_id - prev <= 1):
                        continue
                src = noisy[j].copy()
                noisy[j] = _teleport(src, spec.outlier_magnitude, out_angle[i, j], w, h)
                magnitude[j] = float(np.hypot(*(noisy[j] - pts[j])))
                last_outlier[(i, j)] = frame.frame_id
                ledger.entries.append({
                    "kind": "outlier", "frame_id": frame.frame_id, "hand": i, "detection_index": idx,
                    "keypoint": j, "from": src.tolist(), "to": noisy[j].tolist(),
                    "magnitude": float(np.hypot(*(noisy[j] - src))),
                })
            kps = tuple(
                Keypoint(float(x), float(y),
                         _clip01(spec.clean_confidence - spec.confidence_slope * float(m) / diag))
                for (x, y), m in zip(noisy, magnitude)
            )
            box_shift = float(np.mean(np.hypot(*(corners - [[b.x1, b.y1], [b.x2, b.y2]]).T)))
            score = _clip01(spec.clean_confidence - spec.confidence_slope * box_shift / diag)
            (x1, y1), (x2, y2) = corners
            dets.append(Detection(BBox(float(x1), float(y1), float(x2), float(y2), score), HandPose(kps)))

        if u_false < spec.false_detection_rate:
            lo_s, hi_s = spec.false_size_range
            bw = (lo_s + (hi_s - lo_s) * false_geom[0]) * w
            bh = (lo_s + (hi_s - lo_s) * false_geom[1]) * h
            x1 = false_geom[2] * (w - bw)
            y1 = false_geom[3] * (h - bh)
            lo_c, hi_c = spec.false_confidence_range
            lo_f, hi_f = spec.false_score_range
            kps = tuple(
                Keypoint(float(x1 + fx * bw), float(y1 + fy * bh), float(lo_c + (hi_c - lo_c) * c))
                for (fx, fy), c in zip(false_kp, false_conf)
            )
            box = BBox(float(x1), float(y1), float(x1 + bw), float(y1 + bh),
                       float(lo_f + (hi_f - lo_f) * false_score))
            ledger.entries.append({
                "kind": "false_detection", "frame_id": frame.frame_id, "detection_index": len(dets),
            })
            dets.append(Detection(box, HandPose(kps)))
        out.append(frame.with_detections(dets))
    return out, ledger


def scene_to_dict(scene: SceneSpec) -> dict:
    d = asdict(scene)
    d["bone_ratios"] = {f"{a}-{b}": r for (a, b), r in scene.bone_ratios.items()}
    return d
