from __future__ import annotations

import numpy as np
import pytest

from handforge.config import DEFAULT_BONE_RATIOS, FilterConfig
from handforge.core import BBox, Detection, FrameCandidates, HandPose, Keypoint
from handforge.synth import SceneSpec, hand_template


def make_pose(points, conf=1.0, valid=None) -> HandPose:
    points = np.asarray(points, dtype=float)
    confs = np.broadcast_to(np.asarray(conf, dtype=float), (21,))
    kps = []
    for j, (x, y) in enumerate(points):
        ok = True if valid is None else bool(valid[j])
        kps.append(Keypoint(float(x), float(y), float(confs[j]), valid=ok) if ok else Keypoint.missing())
    return HandPose(tuple(kps))


def hand_points(scale=30.0, wrist=(100.0, 180.0), rotation=0.0):
    return hand_template(scale, DEFAULT_BONE_RATIOS, rotation) + np.asarray(wrist)


def make_det(points, box, score=1.0, conf=1.0) -> Detection:
    return Detection(BBox(*box, score), make_pose(points, conf))


def make_frame(dets, frame_id=0, w=256, h=256) -> FrameCandidates:
    return FrameCandidates(frame_id, frame_id * 33, w, h, f"img/{frame_id:06d}.png", tuple(dets))


def permissive_config(**kw) -> FilterConfig:
    base = dict(s_bone=1000.0, s_area_max=1.0, s_area_min=0.0, s_count=1, t_vmax=1000.0,
                c_hd=0.0, c_pe=0.0, slack=1.0)
    base.update(kw)
    return FilterConfig(**base)


HANCO_SCENE = SceneSpec(n_frames=60, motion="sinusoidal", amplitude=(10.0, 5.0), period=40.0,
                        base_hand_scale=40.0, image_width=224, image_height=224, seed=1)


@pytest.fixture
def hanco_scene():
    return HANCO_SCENE


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
