"""Step b of the self-training loop: spatial then temporal filtering."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .config import FilterConfig
from .core import FrameCandidates
from .spatial import RejectionRecord, histogram, spatial_filter_all
from .temporal import count_interpolated, temporal_filter


@dataclass
class CurationResult:
    frames_in: int
    frames: list[FrameCandidates]
    rejections: list[RejectionRecord] = field(default_factory=list)

    @property
    def detections_kept(self) -> int:
        return sum(len(f.detections) for f in self.frames)

    @property
    def keypoints_interpolated(self) -> int:
        return sum(
            sum(kp.valid and kp.interpolated for kp in d.pose.keypoints)
            for f in self.frames for d in f.detections if d.pose is not None
        )

    @property
    def keypoints_observed(self) -> int:
        return sum(
            sum(kp.valid and not kp.interpolated for kp in d.pose.keypoints)
            for f in self.frames for d in f.detections if d.pose is not None
        )

    def counts(self) -> dict[str, int]:
        return {
            "frames_in": self.frames_in,
            "frames_kept": len(self.frames),
            "detections_kept": self.detections_kept,
            "keypoints_observed": self.keypoints_observed,
            "keypoints_interpolated": self.keypoints_interpolated,
        }

    def histogram(self) -> dict[str, int]:
        return histogram(self.rejections)


def spatial_only(frames: Sequence[FrameCandidates], cfg: FilterConfig, workers: int = 1) -> CurationResult:
    results = spatial_filter_all(frames, cfg, workers)
    kept = [r.frame for r in results if r.frame is not None]
    records = [rec for r in results for rec in r.rejections]
    return CurationResult(len(frames), kept, records)


def curate(
    frames: Sequence[FrameCandidates],
    cfg: FilterConfig,
    workers: int = 1,
    temporal: bool = True,
) -> CurationResult:
    """Run the full filter chain over one video's frames.

    Frames dropped by the spatial stage enter the temporal stage empty so
    that interpolation can still refill them.
    """
    if not temporal:
        return spatial_only(frames, cfg, workers)
    results = spatial_filter_all(frames, cfg, workers)
    records = [rec for r in results for rec in r.rejections]
    staged = [
        r.frame if r.frame is not None else src.with_detections(())
        for r, src in zip(results, frames)
    ]
    out = temporal_filter(staged, cfg)
    return CurationResult(len(frames), out.frames, records + out.rejections)


__all__ = ["CurationResult", "count_interpolated", "curate", "spatial_only"]
