"""Cross-frame consistency: tracks, velocity rejection, short-gap interpolation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .config import FilterConfig
from .core import BBox, Detection, FrameCandidates, HandPose, Keypoint, NUM_KEYPOINTS, iou
from .spatial import (
    BBOX_VELOCITY,
    EXCESS_HAND,
    FRAME_UNDERCOUNT,
    KEYPOINT_VELOCITY,
    WHOLE_FRAME,
    RejectionRecord,
)

INTERPOLATED = -1  # source index of observations created by interpolation


@dataclass
class Track:
    """One hand followed across frames.

    ``observations`` maps frame_id to the detection seen there;
    ``sources`` maps frame_id to the detection's index in the input frame,
    or ``INTERPOLATED``. Per-keypoint origin lives on ``Keypoint.interpolated``.
    """

    track_id: int
    observations: dict[int, Detection] = field(default_factory=dict)
    sources: dict[int, int] = field(default_factory=dict)

    @property
    def frame_ids(self) -> list[int]:
        return sorted(self.observations)

    @property
    def last_frame(self) -> int:
        return max(self.observations)

    def add(self, frame_id: int, det: Detection, source: int) -> None:
        if self.observations and frame_id <= self.last_frame:
            raise ValueError(f"track {self.track_id}: frame {frame_id} out of order")
        self.observations[frame_id] = det
        self.sources[frame_id] = source

    def origin(self, frame_id: int) -> str:
        return "interpolated" if self.sources[frame_id] == INTERPOLATED else "observed"

    @property
    def support(self) -> int:
        return sum(1 for s in self.sources.values() if s != INTERPOLATED)


def _center_dist(a: BBox, b: BBox) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return math.hypot(ax - bx, ay - by)


def associate(
    frames: Sequence[FrameCandidates],
    iou_min: float = 0.1,
    max_gap: int = 5,
) -> list[Track]:
    """Greedy max-IoU association of detections into tracks.

    A detection may continue a track whose last observation is at most
    ``max_gap + 1`` frames back, so short dropouts do not split tracks.
    Pairs below ``iou_min`` never match; equal IoU falls back to the
    smaller box-center distance.
    """
    tracks: list[Track] = []
    active: list[Track] = []
    for frame in frames:
        bounds = (frame.image_width, frame.image_height)
        active = [t for t in active if frame.frame_id - t.last_frame <= max_gap + 1]
        pairs = []
        for ti, track in enumerate(active):
            last = track.observations[track.last_frame].bbox
            for di, det in enumerate(frame.detections):
                overlap = iou(last, det.bbox, bounds)
                if overlap >= iou_min and overlap > 0.0:
                    pairs.append((-overlap, _center_dist(last, det.bbox), track.track_id, di, ti))
        pairs.sort()
        used_t, used_d = set(), set()
        for _, _, _, di, ti in pairs:
            if ti in used_t or di in used_d:
                continue
            used_t.add(ti)
            used_d.add(di)
            active[ti].add(frame.frame_id, frame.detections[di], di)
        for di, det in enumerate(frame.detections):
            if di not in used_d:
                track = Track(len(tracks))
                track.add(frame.frame_id, det, di)
                tracks.append(track)
                active.append(track)
    return tracks


def _with_keypoint(det: Detection, j: int, kp: Keypoint) -> Detection:
    kps = list(det.pose.keypoints)
    kps[j] = kp
    return Detection(det.bbox, HandPose(tuple(kps)), det.interpolated)


def velocity_check(track: Track, cfg: FilterConfig) -> tuple[Track, list[RejectionRecord]]:
    """Remove detections whose box corners jump, invalidate keypoints that jump.

    Each point is compared with its last accepted position in the track and
    the displacement is divided by the frame gap, so removals earlier in the
    track are measured across correctly.
    """
    out = Track(track.track_id)
    records: list[RejectionRecord] = []
    last_box: Optional[tuple[int, BBox]] = None
    last_kp: dict[int, tuple[int, Keypoint]] = {}
    vmax = cfg.t_vmax

    for fid in track.frame_ids:
        det = track.observations[fid]
        src = track.sources[fid]
        if last_box is not None:
            prev_fid, prev = last_box
            g = fid - prev_fid
            speed = max(
                math.hypot(cx - px, cy - py)
                for (cx, cy), (px, py) in zip(det.bbox.corners(), prev.corners())
            ) / g
            if speed > vmax:
                records.append(RejectionRecord(fid, src, BBOX_VELOCITY, speed, vmax))
                continue
        if det.pose is not None:
            for j, kp in enumerate(det.pose.keypoints):
                if not kp.valid:
                    continue
                ref = last_kp.get(j)
                if ref is not None:
                    prev_fid, prev_kp = ref
                    speed = math.hypot(kp.x - prev_kp.x, kp.y - prev_kp.y) / (fid - prev_fid)
                    if speed > vmax:
                        records.append(
                            RejectionRecord(fid, src, KEYPOINT_VELOCITY, speed, vmax, keypoint=j))
                        det = _with_keypoint(det, j, Keypoint.missing())
                        continue
                last_kp[j] = (fid, kp)
        last_box = (fid, det.bbox)
        out.add(fid, det, src)
    return out, records


def _lerp(a: float, b: float, w: float) -> float:
    return a + (b - a) * w


def interpolate(
    track: Track,
    max_gap: int = 5,
    frame_ids: Optional[Iterable[int]] = None,
) -> tuple[Track, int]:
    """Fill gaps of at most ``max_gap`` frames between two anchors.

    Missing detections are rebuilt from the box corners of the neighbouring
    observations; then each keypoint is filled where it is missing between
    two valid occurrences. Only frames listed in ``frame_ids`` are filled
    (all integer frames when None). Returns the new track and the number of
    filled slots (detections plus keypoints).
    """
    allowed = None if frame_ids is None else set(frame_ids)
    obs = dict(track.observations)
    sources = dict(track.sources)
    filled = 0

    fids = sorted(obs)
    for a, b in zip(fids, fids[1:]):
        gap = b - a - 1
        if gap < 1 or gap > max_gap:
            continue
        ba, bb = obs[a].bbox, obs[b].bbox
        for f in range(a + 1, b):
            if allowed is not None and f not in allowed:
                continue
            w = (f - a) / (b - a)
            box = BBox(
                _lerp(ba.x1, bb.x1, w), _lerp(ba.y1, bb.y1, w),
                _lerp(ba.x2, bb.x2, w), _lerp(ba.y2, bb.y2, w),
                min(ba.score, bb.score),
            )
            has_pose = obs[a].pose is not None and obs[b].pose is not None
            pose = HandPose((Keypoint.missing(),) * NUM_KEYPOINTS) if has_pose else None
            obs[f] = Detection(box, pose, interpolated=True)
            sources[f] = INTERPOLATED
            filled += 1

    fids = sorted(obs)
    for j in range(NUM_KEYPOINTS):
        anchor: Optional[tuple[int, Keypoint]] = None
        pending: list[int] = []
        for f in fids:
            pose = obs[f].pose
            if pose is None:
                continue
            kp = pose.keypoints[j]
            if not kp.valid:
                pending.append(f)
                continue
            if anchor is not None and pending and f - anchor[0] - 1 <= max_gap:
                fa, ka = anchor
                for p in pending:
                    w = (p - fa) / (f - fa)
                    new = Keypoint(
                        _lerp(ka.x, kp.x, w), _lerp(ka.y, kp.y, w),
                        min(ka.confidence, kp.confidence), valid=True, interpolated=True,
                    )
                    obs[p] = _with_keypoint(obs[p], j, new)
                    filled += 1
            anchor = (f, kp)
            pending = []

    out = Track(track.track_id)
    for f in sorted(obs):
        out.add(f, obs[f], sources[f])
    return out, filled


@dataclass
class TemporalResult:
    frames: list[FrameCandidates]
    rejections: list[RejectionRecord]
    tracks: list[Track]

    @property
    def filled_slots(self) -> int:
        """Interpolated detections plus interpolated keypoints in the output."""
        return sum(count_interpolated(f) for f in self.frames)


def count_interpolated(frame: FrameCandidates) -> int:
    n = 0
    for det in frame.detections:
        n += det.interpolated
        if det.pose is not None:
            n += sum(kp.interpolated for kp in det.pose.keypoints)
    return n


def temporal_filter(frames: Sequence[FrameCandidates], cfg: FilterConfig) -> TemporalResult:
    """associate -> velocity_check -> interpolate -> re-emit frames.

    Frames are emitted in input order. A frame ending up with more than
    ``s_count`` hands keeps those on the best-supported tracks; one with
    fewer is dropped. Empty input frames are treated as already dropped and
    are not recorded again unless interpolation revives them.
    """
    tracks = associate(frames, cfg.assoc_iou_min, cfg.interp_max_gap)
    present = [f.frame_id for f in frames]
    records: list[RejectionRecord] = []
    cleaned: list[Track] = []
    for track in tracks:
        checked, recs = velocity_check(track, cfg)
        records.extend(recs)
        if not checked.observations:
            continue
        done, _ = interpolate(checked, cfg.interp_max_gap, present)
        cleaned.append(done)

    by_frame: dict[int, list[tuple[Track, Detection, int]]] = {}
    for track in cleaned:
        for fid, det in track.observations.items():
            by_frame.setdefault(fid, []).append((track, det, track.sources[fid]))

    out_frames: list[FrameCandidates] = []
    for frame in frames:
        entries = by_frame.get(frame.frame_id, [])
        if len(entries) > cfg.s_count:
            ranked = sorted(
                entries,
                key=lambda e: (-e[0].support, -e[1].bbox.score, e[2] == INTERPOLATED, e[0].track_id),
            )
            cutoff = ranked[cfg.s_count - 1][0].support
            for track, det, src in ranked[cfg.s_count:]:
                if src != INTERPOLATED:
                    records.append(RejectionRecord(frame.frame_id, src, EXCESS_HAND, track.support, cutoff))
            entries = ranked[: cfg.s_count]
        if len(entries) < cfg.s_count:
            if frame.detections:
                records.append(RejectionRecord(
                    frame.frame_id, WHOLE_FRAME, FRAME_UNDERCOUNT, len(entries), cfg.s_count))
            continue
        entries.sort(key=lambda e: (e[2] == INTERPOLATED, e[2], e[0].track_id))
        out_frames.append(frame.with_detections(e[1] for e in entries))

    return TemporalResult(out_frames, records, cleaned)
