"""Acceptance criteria, one test each, with their tolerances and time budgets.

Every test prints a single PASS/FAIL line (also collected into the pytest
terminal summary) before asserting.
"""
import time
from pathlib import Path

import numpy as np

import conftest
from handforge.config import ASSEMBLY, HANCO, FilterConfig, parse_config, write_config
from handforge.core import BBox
from handforge.dataset_io import (
    emit_datasets, frames_from_dataset, read_candidates, read_dataset, write_candidates,
)
from handforge.metrics import (
    DEFAULT_PCK_GRID, auc, evaluate_frames, match_detections, pck, pck_curve, precision_recall,
)
from handforge.loop import run_loop
from handforge.pipeline import curate, spatial_only
from handforge.spatial import spatial_filter
from handforge.synth import CorruptionSpec, SceneSpec, corrupt, generate, scene_config
from handforge.temporal import temporal_filter
from conftest import hand_points, make_det, make_frame, make_pose
from oracles import best_assignment, count_pr, direct_auc, direct_pck, reference_spatial

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def report(name, ok, elapsed, budget, detail=""):
    ok = ok and elapsed < budget
    line = f"{'PASS' if ok else 'FAIL'}  {name}  ({elapsed:.2f}s / {budget:.0f}s budget){'  ' + detail if detail else ''}"
    print(line)
    conftest.ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_config_fidelity():
    t0 = time.perf_counter()
    keys = ("s_bone", "s_area_max", "s_area_min", "s_count", "t_vmax")
    hanco = parse_config(CONFIGS / "hanco.cfg").filter
    assembly = parse_config(CONFIGS / "assembly.cfg").filter
    got = [tuple(getattr(c, k) for k in keys) for c in (hanco, assembly)]
    ok = got == [(50, 0.75, 0.15, 1, 25), (80, 0.80, 0.05, 2, 45)] and (hanco, assembly) == (HANCO, ASSEMBLY)
    report("config fidelity", ok, time.perf_counter() - t0, 1, f"rows={got}")


def _random_frame(rng, fid):
    dets = []
    for _ in range(int(rng.integers(0, 5))):
        scale = rng.uniform(15, 60)
        pts = hand_points(scale=scale, wrist=(128, 200), rotation=rng.uniform(-0.4, 0.4))
        pts = np.clip(pts + rng.normal(0, rng.choice([0.5, 8.0, 25.0]), pts.shape), 0, 256)
        x1, y1 = rng.uniform(0, 150, 2)
        box = (x1, y1, x1 + rng.uniform(5, 256), y1 + rng.uniform(5, 256))
        dets.append(make_det(pts, box, score=rng.uniform(0.6, 1.0), conf=rng.uniform(0.0, 1.0, 21)))
    return make_frame(dets, frame_id=fid)


def _random_config(rng):
    lo = rng.uniform(0, 0.3)
    return FilterConfig(s_bone=rng.uniform(15, 60), s_area_min=lo, s_area_max=rng.uniform(lo + 0.05, 1.0),
                        s_count=int(rng.integers(1, 4)), t_vmax=25, c_hd=rng.uniform(0.5, 0.95),
                        c_pe=rng.uniform(0, 0.6))


def test_filter_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    mismatches = 0
    for i in range(1000):
        frame, cfg = _random_frame(rng, i), (_random_config(rng) if i % 2 else HANCO)
        kept, masks, rejections = reference_spatial(frame, cfg)
        res = spatial_filter(frame, cfg)
        same = [(r.detection_index, r.reason) for r in res.rejections] == rejections
        if kept is None:
            same &= res.dropped
        else:
            same &= list(res.kept_indices) == kept and all(
                [k.valid for k in d.pose.keypoints] == list(m) for d, m in zip(res.frame.detections, masks))
        mismatches += not same
    report("filter oracle equivalence", mismatches == 0, time.perf_counter() - t0, 10,
           f"mismatches={mismatches}/1000")


def test_interpolation_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    cfg = FilterConfig(s_bone=1000, s_area_max=1.0, s_area_min=0.0, s_count=1, t_vmax=25)
    worst, filled_ok, six_ok = 0.0, True, True
    for trial in range(20):
        v = tuple(rng.uniform(-1.5, 1.5, 2))
        scene = SceneSpec(n_frames=120, motion="linear", velocity=v, image_width=640, image_height=480,
                          seed=trial)
        truth = generate(scene)
        frames, gone, t = list(truth), set(), 3
        while t < 100:
            k = int(rng.integers(1, 6))
            gone.update(range(t, t + k))
            t += k + int(rng.integers(1, 6))
        gone6 = set(range(106, 112))
        for f in gone | gone6:
            frames[f] = frames[f].with_detections(())
        out = {f.frame_id: f for f in temporal_filter(frames, cfg).frames}
        filled_ok &= gone <= set(out)
        six_ok &= not (gone6 & set(out))
        for f in gone:
            if f not in out:
                continue
            d, g = out[f].detections[0], truth[f].detections[0]
            kp_err = max(max(abs(a.x - b.x), abs(a.y - b.y)) for a, b in zip(d.pose.keypoints, g.pose.keypoints))
            box_err = float(np.max(np.abs(np.subtract(d.bbox.corners(), g.bbox.corners()))))
            worst = max(worst, kp_err, box_err)
    ok = worst < 1e-9 and filled_ok and six_ok
    report("interpolation exactness", ok, time.perf_counter() - t0, 5,
           f"max_err={worst:.2e}px gaps<=5 filled={filled_ok} gap6 unfilled={six_ok}")


def test_outlier_removal():
    t0 = time.perf_counter()
    t_vmax = 25.0
    scene = SceneSpec(n_frames=10_000, motion="sinusoidal", amplitude=(20.0, 10.0), period=150.0, seed=7)
    truth = generate(scene)
    cfg = scene_config(scene, truth, t_vmax=t_vmax)
    noisy, ledger = corrupt(truth, CorruptionSpec(keypoint_jitter_sigma=0.5, outlier_rate=0.01,
                                                  outlier_magnitude=3 * t_vmax, isolated_outliers=True,
                                                  seed=8))
    out = {f.frame_id: f for f in temporal_filter(noisy, cfg).frames}

    def survives(fid, j):
        f = out.get(fid)
        if f is None or not f.detections:
            return False
        kp = f.detections[0].pose.keypoints[j]
        return kp.valid and not kp.interpolated

    outliers = {(e["frame_id"], e["keypoint"]) for e in ledger.of_kind("outlier")}
    removed = sum(not survives(f, j) for f, j in outliers)
    clean = [(f.frame_id, j) for f in noisy for j in range(21) if (f.frame_id, j) not in outliers]
    lost = sum(not survives(f, j) for f, j in clean)
    rate, false_rate = removed / len(outliers), lost / len(clean)
    report("outlier removal", rate >= 0.99 and false_rate < 0.001, time.perf_counter() - t0, 30,
           f"removed={removed}/{len(outliers)} ({rate:.4f}) clean_lost={lost}/{len(clean)} ({false_rate:.5f})")


def test_table_ii_pattern():
    t0 = time.perf_counter()
    scene = SceneSpec(n_frames=2000, motion="sinusoidal", amplitude=(10.0, 5.0), period=40.0,
                      base_hand_scale=40.0, image_width=224, image_height=224, seed=1)
    truth = generate(scene)
    cfg = scene_config(scene, truth)
    noisy, _ = corrupt(truth, CorruptionSpec(keypoint_jitter_sigma=0.5, dropout_rate=0.1,
                                             false_detection_rate=0.2, seed=3))

    def pr(frames):
        rep = evaluate_frames(frames, truth)
        return rep["precision@0.5"], rep["recall@0.5"]

    (p0, r0), (p1, r1), (p2, r2) = pr(noisy), pr(spatial_only(noisy, cfg).frames), pr(curate(noisy, cfg).frames)
    ok = p1 >= p0 + 0.02 and r1 < r0 and r2 >= r1 + 0.05
    report("filter-stage precision/recall pattern", ok, time.perf_counter() - t0, 30,
           f"unfiltered P={p0:.4f} R={r0:.4f} | spatial P={p1:.4f} R={r1:.4f} | spatial+temporal P={p2:.4f} R={r2:.4f}")


def _boxes(rng, n):
    out = []
    for _ in range(n):
        x, y = rng.uniform(0, 60, 2)
        w, h = rng.uniform(5, 40, 2)
        out.append(BBox(x, y, x + w, y + h, float(rng.choice([0.3, 0.6, 0.9, rng.uniform()]))))
    return out


def _tuples(bs):
    return [(b.x1, b.y1, b.x2, b.y2, b.score) for b in bs]


def test_metric_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    bad_match = bad_pr = bad_pck = 0
    grid = (0.0, 0.25, 0.5, 0.75)
    for _ in range(500):
        preds, gts = _boxes(rng, int(rng.integers(0, 6))), _boxes(rng, int(rng.integers(0, 6)))
        thr = float(rng.choice([0.3, 0.5, 0.75]))
        bad_match += match_detections(preds, gts, thr).pred_match != best_assignment(_tuples(preds), _tuples(gts), thr)
        curve = precision_recall([preds], [gts], thr, grid)
        bad_pr += any((p, r) != count_pr([_tuples(preds)], [_tuples(gts)], thr, t) for t, p, r in curve.points)
    pairs, raw = [], []
    for _ in range(500):
        gt_xy = rng.uniform(0, 100, (21, 2))
        pred_xy = gt_xy + rng.normal(0, rng.uniform(1, 15), (21, 2))
        gv, pv = rng.random(21) > 0.1, rng.random(21) > 0.1
        gv[0] = True
        x, y = rng.uniform(0, 20, 2)
        box = BBox(x, y, x + rng.uniform(20, 120), y + rng.uniform(20, 120))
        b = (box.x1, box.y1, box.x2, box.y2)
        pred, gt = make_pose(pred_xy, valid=pv), make_pose(gt_xy, valid=gv)
        t = float(rng.uniform(0.01, 0.5))
        bad_pck += pck(pred, gt, t, box) != direct_pck(pred_xy, pv, gt_xy, gv, b, t)
        pairs.append((pred, gt, box))
        raw.append((pred_xy, pv, gt_xy, gv, b))
    g = list(DEFAULT_PCK_GRID)
    curve = [float(np.mean([direct_pck(*r[:4], r[4], t) for r in raw])) for t in g]
    auc_err = abs(auc(pairs, g) - direct_auc(curve, g))
    curve_err = float(np.max(np.abs(pck_curve(pairs, g) - curve)))
    ok = bad_match == bad_pr == bad_pck == 0 and auc_err < 1e-12 and curve_err < 1e-12
    report("metric oracle equivalence", ok, time.perf_counter() - t0, 10,
           f"match={bad_match} pr={bad_pr} pck={bad_pck} mismatches/500, auc_err={auc_err:.1e}")


def test_loop_rehearsal(tmp_path):
    from test_loop import FCFG, SCENE, _snapshot, loop_cfg
    t0 = time.perf_counter()
    videos = []
    for i, seed in enumerate((3, 4)):
        p = tmp_path / "videos" / f"cam{i}.jsonl"
        p.parent.mkdir(exist_ok=True)
        write_candidates(generate(SceneSpec(**{**SCENE.__dict__, "seed": seed})), p)
        videos.append(str(p))
    reports = run_loop(loop_cfg(tmp_path / "a", videos, tmp_path / "log-a"), FCFG)
    pairs = sum((tmp_path / "a" / f"iter-{k}" / "det-dataset.json").exists() and
                (tmp_path / "a" / f"iter-{k}" / "pose-dataset.json").exists() for k in (1, 2, 3))
    kept = [r["counts"]["detections_kept"] for r in reports]
    resumed = loop_cfg(tmp_path / "b", videos, tmp_path / "log-b")
    run_loop(resumed, FCFG, stop_after=2)
    (tmp_path / "b" / "iter-3").mkdir()
    (tmp_path / "b" / "iter-3" / "candidates-cam0.jsonl").write_text("partial")
    run_loop(resumed, FCFG)
    identical = _snapshot(tmp_path / "a") == _snapshot(tmp_path / "b")
    ok = len(reports) == 3 and pairs == 3 and kept == sorted(kept) and identical
    report("loop rehearsal", ok, time.perf_counter() - t0, 20,
           f"reports={len(reports)} dataset_pairs={pairs} detections_kept={kept} resume_identical={identical}")


def test_round_trip(tmp_path):
    t0 = time.perf_counter()
    scene = SceneSpec(n_frames=300, n_hands=2, image_width=500, motion="sinusoidal", amplitude=(9.3, 4.1), seed=12)
    truth = generate(scene)
    cfg = scene_config(scene, truth)
    noisy, _ = corrupt(truth, CorruptionSpec(keypoint_jitter_sigma=0.77, dropout_rate=0.1, seed=2))
    frames = curate(noisy, cfg).frames

    write_candidates(frames, tmp_path / "c.jsonl")
    back = read_candidates(tmp_path / "c.jsonl")
    cand_ok = back == frames

    out = emit_datasets(frames, tmp_path / "ds", cfg)
    rebuilt = frames_from_dataset(read_dataset(out.pose_path))
    drift = 0.0
    ds_ok = len(rebuilt) == len(frames)
    for a, b in zip(rebuilt, frames):
        ds_ok &= len(a.detections) == len(b.detections)
        for da, db in zip(a.detections, b.detections):
            drift = max(drift, float(np.max(np.abs(np.subtract(da.bbox.corners(), db.bbox.corners())))))
            for ka, kb in zip(da.pose.keypoints, db.pose.keypoints):
                ds_ok &= (ka.valid, ka.interpolated) == (kb.valid, kb.interpolated)
                if ka.valid:
                    drift = max(drift, abs(ka.x - kb.x), abs(ka.y - kb.y))

    write_config(cfg, tmp_path / "c.cfg")
    cfg_ok = parse_config(tmp_path / "c.cfg").filter == cfg
    ok = cand_ok and ds_ok and cfg_ok and drift < 1e-6
    report("round trip", ok, time.perf_counter() - t0, 5,
           f"candidates={cand_ok} datasets={ds_ok} config={cfg_ok} max_drift={drift:.1e}px")
