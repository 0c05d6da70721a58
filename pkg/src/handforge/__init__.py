"""Curation of self-supervised hand pose training data."""
from .config import ASSEMBLY, HANCO, Config, ConfigError, FilterConfig, LoopConfig, ModelAdapter, parse_config
from .core import (
    BONES,
    NUM_KEYPOINTS,
    SKELETON,
    BBox,
    Detection,
    FrameCandidates,
    HandPose,
    Keypoint,
    ValidationError,
    area_fraction,
    bone_length,
    iou,
)
from .dataset_io import read_candidates, write_candidates
from .pipeline import CurationResult, curate
from .spatial import RejectionRecord, spatial_filter
from .temporal import temporal_filter

__version__ = "0.1.0"

__all__ = [
    "ASSEMBLY", "BBox", "BONES", "Config", "ConfigError", "CurationResult", "Detection",
    "FilterConfig", "FrameCandidates", "HANCO", "HandPose", "Keypoint", "LoopConfig",
    "ModelAdapter", "NUM_KEYPOINTS", "RejectionRecord", "SKELETON", "ValidationError",
    "area_fraction", "bone_length", "curate", "iou", "parse_config", "read_candidates",
    "spatial_filter", "temporal_filter", "write_candidates",
]
