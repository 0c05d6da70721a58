"""On-disk formats: candidate streams (JSONL) and the two curated datasets.

Candidate line::

    {"frame_id": 0, "timestamp_ms": 0,
     "image": {"width": 640, "height": 480, "path": "frames/000000.jpg"},
     "detections": [{"bbox": [x1, y1, x2, y2], "score": 0.97,
                     "keypoints": [[x, y, conf], ..., null, ...]}]}

``null`` marks a removed keypoint. Filter output may also carry
``"interpolated": true`` on a detection and ``"interpolated_keypoints"``
listing keypoint indices filled by interpolation.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .config import FilterConfig
from .core import (
    BONES,
    KEYPOINT_NAMES,
    NUM_KEYPOINTS,
    BBox,
    Detection,
    FrameCandidates,
    HandPose,
    Keypoint,
    ValidationError,
)
from .spatial import RejectionRecord, histogram

log = logging.getLogger(__name__)

DETECTION_DATASET = "det-dataset.json"
POSE_DATASET = "pose-dataset.json"
MANIFEST = "manifest.json"

V_MISSING, V_INTERPOLATED, V_OBSERVED = 0, 1, 2


class CandidateFormatError(ValidationError):
    """A structurally broken candidate record. Always names the frame or line."""


# -- candidates ---------------------------------------------------------------

def detection_to_dict(det: Detection) -> dict:
    b = det.bbox
    out: dict = {"bbox": [b.x1, b.y1, b.x2, b.y2], "score": b.score}
    if det.pose is not None:
        out["keypoints"] = [
            [kp.x, kp.y, kp.confidence] if kp.valid else None for kp in det.pose.keypoints
        ]
        interp = [j for j, kp in enumerate(det.pose.keypoints) if kp.valid and kp.interpolated]
        if interp:
            out["interpolated_keypoints"] = interp
    if det.interpolated:
        out["interpolated"] = True
    return out


def frame_to_dict(frame: FrameCandidates) -> dict:
    return {
        "frame_id": frame.frame_id,
        "timestamp_ms": frame.timestamp_ms,
        "image": {"width": frame.image_width, "height": frame.image_height, "path": frame.image_path},
        "detections": [detection_to_dict(d) for d in frame.detections],
    }


def _detection_from_dict(d: dict, frame_id) -> Detection:
    try:
        x1, y1, x2, y2 = (float(v) for v in d["bbox"])
        bbox = BBox(x1, y1, x2, y2, float(d["score"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CandidateFormatError(f"frame {frame_id}: bad bbox ({exc})") from None
    pose = None
    raw = d.get("keypoints")
    if raw is not None:
        if not isinstance(raw, list) or len(raw) != NUM_KEYPOINTS:
            n = len(raw) if isinstance(raw, list) else type(raw).__name__
            raise CandidateFormatError(
                f"frame {frame_id}: expected {NUM_KEYPOINTS} keypoints, got {n}")
        interp = set(d.get("interpolated_keypoints", ()))
        kps = []
        for j, entry in enumerate(raw):
            if entry is None:
                kps.append(Keypoint.missing())
                continue
            try:
                x, y, c = (float(v) for v in entry)
                kps.append(Keypoint(x, y, c, valid=True, interpolated=j in interp))
            except (TypeError, ValueError) as exc:
                raise CandidateFormatError(f"frame {frame_id}: keypoint {j}: {exc}") from None
        pose = HandPose(tuple(kps))
    return Detection(bbox, pose, bool(d.get("interpolated", False)))


def frame_from_dict(d: dict) -> FrameCandidates:
    frame_id = d.get("frame_id", "?") if isinstance(d, dict) else "?"
    try:
        image = d["image"]
        frame = FrameCandidates(
            frame_id=int(d["frame_id"]),
            timestamp_ms=int(d["timestamp_ms"]),
            image_width=int(image["width"]),
            image_height=int(image["height"]),
            image_path=str(image.get("path", "")),
            detections=tuple(_detection_from_dict(det, frame_id) for det in d["detections"]),
        )
        frame.check_keypoints_in_bounds()
    except CandidateFormatError:
        raise
    except ValidationError as exc:
        msg = str(exc)
        raise CandidateFormatError(msg if msg.startswith("frame ") else f"frame {frame_id}: {msg}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise CandidateFormatError(f"frame {frame_id}: malformed record ({exc!r})") from None
    return frame


def iter_candidates(path, malformed: Optional[list] = None) -> Iterator[FrameCandidates]:
    """Stream frames from a JSONL file, enforcing strictly increasing frame ids.

    Lines that are not valid JSON are skipped with a warning; their line
    numbers are appended to ``malformed`` when given.
    """
    last = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                log.warning("%s:%d: unparseable line skipped", path, lineno)
                if malformed is not None:
                    malformed.append(lineno)
                continue
            if not isinstance(record, dict):
                raise CandidateFormatError(f"{path}:{lineno}: record is not an object")
            frame = frame_from_dict(record)
            if last is not None and frame.frame_id <= last:
                kind = "duplicate" if frame.frame_id == last else "non-monotonic"
                raise CandidateFormatError(f"frame {frame.frame_id}: {kind} frame_id (after {last})")
            last = frame.frame_id
            yield frame


def scan_candidates(path) -> tuple[list[FrameCandidates], int]:
    """All frames of a candidate file plus the number of skipped lines."""
    bad: list[int] = []
    frames = list(iter_candidates(path, bad))
    return frames, len(bad)


def read_candidates(path) -> list[FrameCandidates]:
    return scan_candidates(path)[0]


def write_candidates(frames: Iterable[FrameCandidates], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for frame in frames:
            fh.write(json.dumps(frame_to_dict(frame), separators=(",", ":")))
            fh.write("\n")
            n += 1
    return n


def write_rejections(records: Iterable[RejectionRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), separators=(",", ":")) + "\n")


def read_rejections(path) -> list[RejectionRecord]:
    with open(path, encoding="utf-8") as fh:
        return [RejectionRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def rejections_path(candidates_path) -> Path:
    p = Path(candidates_path)
    return p.with_name(p.name + ".rejections.jsonl")


# -- curated datasets -----------------------------------------------------------

@dataclass(frozen=True)
class EmittedDatasets:
    detection_path: Path
    pose_path: Path
    manifest_path: Path
    manifest: dict


def force_requested(force: bool = False) -> bool:
    return force or os.environ.get("HANDFORGE_FORCE", "") == "1"


def _pose_categories() -> list[dict]:
    return [{
        "id": 1,
        "name": "hand",
        "keypoints": list(KEYPOINT_NAMES),
        "skeleton": [[a + 1, b + 1] for a, b in BONES],
    }]


def build_datasets(frames: Sequence[FrameCandidates]) -> tuple[dict, dict]:
    images, det_anns, pose_anns = [], [], []
    ann_id = 0
    for image_id, frame in enumerate(frames, 1):
        images.append({
            "id": image_id,
            "file_name": frame.image_path,
            "width": frame.image_width,
            "height": frame.image_height,
            "frame_id": frame.frame_id,
            "timestamp_ms": frame.timestamp_ms,
        })
        for det in frame.detections:
            ann_id += 1
            b = det.bbox
            ann = {
                "id": ann_id,
                "image_id": image_id,
                "bbox": [b.x1, b.y1, b.x2 - b.x1, b.y2 - b.y1],
                "area": b.area,
                "category_id": 1,
                "iscrowd": 0,
                "score": b.score,
                "interpolated": det.interpolated,
            }
            det_anns.append(ann)
            kps, scores = [], []
            kp_list = det.pose.keypoints if det.pose is not None else (Keypoint.missing(),) * NUM_KEYPOINTS
            for kp in kp_list:
                if not kp.valid:
                    kps += [0.0, 0.0, V_MISSING]
                    scores.append(0.0)
                else:
                    kps += [kp.x, kp.y, V_INTERPOLATED if kp.interpolated else V_OBSERVED]
                    scores.append(kp.confidence)
            pose_anns.append({
                **ann,
                "keypoints": kps,
                "num_keypoints": sum(1 for v in kps[2::3] if v > 0),
                "keypoint_scores": scores,
            })
    det = {"images": images, "annotations": det_anns, "categories": [{"id": 1, "name": "hand"}]}
    pose = {"images": images, "annotations": pose_anns, "categories": _pose_categories()}
    return det, pose


def _dump(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, separators=(",", ":"))
        fh.write("\n")


def emit_datasets(
    frames: Sequence[FrameCandidates],
    out_dir,
    config: FilterConfig,
    frames_in: Optional[int] = None,
    rejections: Iterable[RejectionRecord] = (),
    force: bool = False,
    extra: Optional[dict] = None,
) -> EmittedDatasets:
    """Write the detector dataset, the pose dataset and the manifest.

    Refuses to overwrite an existing manifest unless ``force`` is set or
    HANDFORGE_FORCE=1.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / MANIFEST
    if manifest_path.exists() and not force_requested(force):
        raise FileExistsError(f"{manifest_path} exists; pass force to overwrite")

    det, pose = build_datasets(frames)
    n_obs = sum(1 for a in pose["annotations"] for v in a["keypoints"][2::3] if v == V_OBSERVED)
    n_int = sum(1 for a in pose["annotations"] for v in a["keypoints"][2::3] if v == V_INTERPOLATED)
    manifest = {
        "counts": {
            "frames_in": len(frames) if frames_in is None else frames_in,
            "frames_kept": len(frames),
            "detections_kept": len(det["annotations"]),
            "keypoints_observed": n_obs,
            "keypoints_interpolated": n_int,
        },
        "rejections": histogram(rejections),
        "dropped_frames": "excluded",
        "config": config.to_flat(),
    }
    if extra:
        manifest.update(extra)

    det_path, pose_path = out_dir / DETECTION_DATASET, out_dir / POSE_DATASET
    _dump(det, det_path)
    _dump(pose, pose_path)
    _dump(manifest, manifest_path)
    return EmittedDatasets(det_path, pose_path, manifest_path, manifest)


def read_dataset(path) -> dict:
    """Load a curated dataset and check its referential invariants."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    image_ids = {img["id"] for img in data["images"]}
    seen = set()
    for ann in data["annotations"]:
        if ann["id"] in seen:
            raise ValidationError(f"{path}: duplicate annotation id {ann['id']}")
        seen.add(ann["id"])
        if ann["image_id"] not in image_ids:
            raise ValidationError(f"{path}: annotation {ann['id']} references unknown image")
        if ann["bbox"][2] <= 0 or ann["bbox"][3] <= 0:
            raise ValidationError(f"{path}: annotation {ann['id']} has an empty box")
        if "keypoints" in ann:
            if len(ann["keypoints"]) != 3 * NUM_KEYPOINTS:
                raise ValidationError(f"{path}: annotation {ann['id']} keypoints length")
            if ann["num_keypoints"] != sum(1 for v in ann["keypoints"][2::3] if v > 0):
                raise ValidationError(f"{path}: annotation {ann['id']} num_keypoints mismatch")
    return data


def frames_from_dataset(data: dict) -> list[FrameCandidates]:
    """Rebuild frames from a pose (or detection) dataset."""
    by_image: dict[int, list[Detection]] = {img["id"]: [] for img in data["images"]}
    for ann in data["annotations"]:
        x, y, w, h = ann["bbox"]
        bbox = BBox(x, y, x + w, y + h, ann["score"])
        pose = None
        if "keypoints" in ann:
            flat, scores = ann["keypoints"], ann["keypoint_scores"]
            kps = []
            for j in range(NUM_KEYPOINTS):
                kx, ky, v = flat[3 * j: 3 * j + 3]
                if v == V_MISSING:
                    kps.append(Keypoint.missing())
                else:
                    kps.append(Keypoint(kx, ky, scores[j], valid=True, interpolated=v == V_INTERPOLATED))
            pose = HandPose(tuple(kps))
        by_image[ann["image_id"]].append(Detection(bbox, pose, bool(ann.get("interpolated", False))))
    return [
        FrameCandidates(
            frame_id=img["frame_id"],
            timestamp_ms=img["timestamp_ms"],
            image_width=img["width"],
            image_height=img["height"],
            image_path=img["file_name"],
            detections=tuple(by_image[img["id"]]),
        )
        for img in data["images"]
    ]
