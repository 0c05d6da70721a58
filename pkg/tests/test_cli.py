import json
import shlex
import subprocess
import sys
from pathlib import Path

import pytest

from handforge.cli import main
from handforge.config import HANCO
from handforge.dataset_io import read_candidates, write_candidates
from handforge.pipeline import curate
from handforge.synth import CorruptionSpec, SceneSpec, corrupt, generate

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
HANCO_CFG = str(CONFIGS / "hanco.cfg")
MOCK = Path(__file__).with_name("mock_model.py")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


@pytest.fixture
def clean(tmp_path):
    scene = SceneSpec(n_frames=30, motion="linear", velocity=(0.5, 0.2), base_hand_scale=40,
                      image_width=224, image_height=224, seed=1)
    p = tmp_path / "clean.jsonl"
    write_candidates(generate(scene), p)
    return p


@pytest.fixture
def noisy(tmp_path):
    scene = SceneSpec(n_frames=120, motion="sinusoidal", amplitude=(10, 5), period=40,
                      base_hand_scale=40, image_width=224, image_height=224, seed=1)
    frames, _ = corrupt(generate(scene), CorruptionSpec(keypoint_jitter_sigma=0.5, dropout_rate=0.1,
                                                        false_detection_rate=0.3, outlier_rate=0.01,
                                                        isolated_outliers=True, seed=4))
    p = tmp_path / "noisy.jsonl"
    write_candidates(frames, p)
    return p


def test_filter_clean_fixture(capsys, tmp_path, clean):
    code, summary, _ = run(capsys, "filter", "--config", HANCO_CFG, clean, tmp_path / "out.jsonl")
    assert code == 0
    assert summary["counts"]["frames_in"] == summary["counts"]["frames_kept"] == 30
    assert summary["counts"]["detections_kept"] == 30 and summary["rejections"] == {}
    assert read_candidates(tmp_path / "out.jsonl") == read_candidates(clean)


def test_filter_counts_match_library(capsys, tmp_path, noisy):
    code, summary, _ = run(capsys, "filter", "-c", HANCO_CFG, "--workers", 1, noisy, tmp_path / "o.jsonl")
    assert code == 0
    lib = curate(read_candidates(noisy), HANCO)
    assert summary["counts"] == lib.counts() and summary["rejections"] == lib.histogram()


def test_stats_reproduces_manifest(capsys, tmp_path, noisy):
    run(capsys, "filter", "-c", HANCO_CFG, noisy, tmp_path / "o.jsonl")
    code, built, _ = run(capsys, "build-dataset", "-c", HANCO_CFG, noisy, tmp_path / "ds")
    assert code == 0
    _, from_filter, _ = run(capsys, "stats", tmp_path / "o.jsonl")
    _, from_manifest, _ = run(capsys, "stats", tmp_path / "ds" / "manifest.json")
    assert from_filter["rejections"] == from_manifest["rejections"] == built["rejections"]
    manifest = json.loads((tmp_path / "ds" / "manifest.json").read_text())
    assert from_manifest["counts"] == manifest["counts"] == built["counts"]
    for key, value in from_filter["counts"].items():
        assert manifest["counts"][key] == value


def test_missing_key_exit_1(capsys, tmp_path, clean):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("\n".join(l for l in Path(HANCO_CFG).read_text().splitlines() if "t_vmax" not in l))
    code, _, err = run(capsys, "filter", "-c", cfg, clean, tmp_path / "o.jsonl")
    assert code == 1 and "t_vmax" in err


def test_override_revalidated(capsys, tmp_path, clean):
    code, _, err = run(capsys, "filter", "-c", HANCO_CFG, "--set", "s_area_min=0.9", clean, tmp_path / "o")
    assert code == 1 and "s_area" in err
    code, summary, _ = run(capsys, "filter", "-c", HANCO_CFG, "--set", "s_bone=5", clean, tmp_path / "o")
    assert code == 0 and summary["counts"]["frames_kept"] == 0


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["filter", "--bogus"])
    assert exc.value.code == 1


def test_io_error_exit_2(capsys, tmp_path):
    code, _, err = run(capsys, "filter", "-c", HANCO_CFG, tmp_path / "missing.jsonl", tmp_path / "o")
    assert code == 2 and "missing.jsonl" in err


def test_malformed_candidates_exit_1(capsys, tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"frame_id": 0, "timestamp_ms": 0, "image": {"width": 10, "height": 10}, '
                 '"detections": [{"bbox": [0, 0, 5, 5], "score": 1, "keypoints": [[1, 1, 1]]}]}\n')
    code, _, err = run(capsys, "filter", "-c", HANCO_CFG, p, tmp_path / "o")
    assert code == 1 and "frame 0" in err


def test_build_dataset_refuses_overwrite(capsys, tmp_path, clean, monkeypatch):
    assert run(capsys, "build-dataset", "-c", HANCO_CFG, clean, tmp_path / "ds")[0] == 0
    assert run(capsys, "build-dataset", "-c", HANCO_CFG, clean, tmp_path / "ds")[0] == 2
    assert run(capsys, "build-dataset", "-c", HANCO_CFG, "--force", clean, tmp_path / "ds")[0] == 0
    monkeypatch.setenv("HANDFORGE_FORCE", "1")
    assert run(capsys, "build-dataset", "-c", HANCO_CFG, clean, tmp_path / "ds")[0] == 0


def test_evaluate(capsys, tmp_path, clean, noisy):
    code, rep, _ = run(capsys, "evaluate", clean, clean, "--out", tmp_path / "r.json")
    assert code == 0 and rep["precision@0.5"] == rep["recall@0.75"] == 1.0 and rep["auc"] == 1.0
    full = json.loads((tmp_path / "r.json").read_text())
    assert set(full) >= {"precision@0.5", "recall@0.5", "precision@0.75", "recall@0.75", "auc", "pr_curves"}
    code, rep, _ = run(capsys, "evaluate", "-c", HANCO_CFG, noisy, clean,
                       "--sweep-c-hd", "0.5,0.9", "--sweep-c-pe", "0.2")
    assert code == 0 and len(rep["sweep"]) == 2


def test_synth_writes_triple(capsys, tmp_path):
    code, summary, _ = run(capsys, "synth", tmp_path / "s", "--frames", 40, "--dropout-rate", 0.2,
                           "--false-rate", 0.2, "--seed", 3)
    assert code == 0 and summary["frames"] == 40
    for name in ("truth.jsonl", "candidates.jsonl", "ledger.json", "scene.cfg"):
        assert (tmp_path / "s" / name).exists()
    # ground truth passes its own scene config untouched
    code, out, _ = run(capsys, "filter", "-c", tmp_path / "s" / "scene.cfg",
                       tmp_path / "s" / "truth.jsonl", tmp_path / "t.jsonl")
    assert code == 0 and out["rejections"] == {} and out["counts"]["frames_kept"] == 40


def _loop_cfg(tmp_path, video, infer_extra=""):
    py, mock = shlex.quote(sys.executable), shlex.quote(str(MOCK))
    log = shlex.quote(str(tmp_path / "train.log"))
    cfg = tmp_path / "loop.cfg"
    cfg.write_text(Path(HANCO_CFG).read_text() + "\n".join([
        "work_dir = work",
        f"videos = {video}",
        f"detector.infer_command = {py} {mock} infer {{model}} {{video}} {{out}} {infer_extra}",
        f"detector.train_command = {py} {mock} train detector {{model}} {{dataset}} {log}",
        "detector.model_ref = ckpt-0",
        f"pose.train_command = {py} {mock} train pose {{model}} {{dataset}} {log}",
        "pose.model_ref = ckpt-0",
    ]) + "\n")
    return cfg


def test_run_three_iterations(capsys, tmp_path, clean):
    cfg = _loop_cfg(tmp_path, clean)
    code, summary, _ = run(capsys, "run", "-c", cfg, "--iterations", 3)
    assert code == 0 and summary["iterations"] == 3
    assert sorted(p.name for p in (tmp_path / "work").iterdir()) == ["iter-1", "iter-2", "iter-3"]


def test_run_adapter_failure_exit_3(capsys, tmp_path, clean):
    code, _, err = run(capsys, "run", "-c", _loop_cfg(tmp_path, clean, "--exit 1"), "--iterations", 1)
    assert code == 3 and "exited with 1" in err


def test_module_help():
    for args in ([], ["filter"], ["run"], ["stats"]):
        proc = subprocess.run([sys.executable, "-m", "handforge", *args, "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0 and "usage" in proc.stdout
