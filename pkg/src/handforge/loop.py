"""Self-training loop: infer -> filter -> emit datasets -> retrain, repeated.

Models are external programs driven through command templates; this module
only moves files between them. Layout under ``work_dir``::

    iter-<k>/candidates-<video>.jsonl   raw candidates from inference
    iter-<k>/filtered-<video>.jsonl     curated frames
    iter-<k>/det-dataset.json, pose-dataset.json, manifest.json
    iter-<k>/report.json                written last; marks the iteration done
"""
from __future__ import annotations

import json
import logging
import re
import shlex
import shutil
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .config import FilterConfig, LoopConfig, ModelAdapter
from .dataset_io import (
    emit_datasets,
    read_dataset,
    rejections_path,
    scan_candidates,
    write_candidates,
    write_rejections,
)
from .pipeline import curate

log = logging.getLogger(__name__)

REPORT = "report.json"
PLACEHOLDERS = ("model", "video", "out", "dataset", "boxes")


class AdapterError(RuntimeError):
    """An external model command failed or produced unusable output."""

    def __init__(self, message: str, returncode: Optional[int] = None, stderr: str = ""):
        super().__init__(message)
        self.returncode = returncode
        self.stderr = stderr


def render_command(template: str, **values: str) -> list[str]:
    """Split a template shell-style and substitute ``{placeholder}`` tokens."""
    unknown = set(re.findall(r"\{(\w+)\}", template)) - set(PLACEHOLDERS)
    if unknown:
        raise AdapterError(f"unknown placeholder(s) {sorted(unknown)} in {template!r}")
    out = []
    for token in shlex.split(template):
        for key, value in values.items():
            token = token.replace("{" + key + "}", str(value))
        out.append(token)
    return out


def _run(argv: list[str], what: str) -> subprocess.CompletedProcess:
    log.debug("running %s: %s", what, argv)
    try:
        return subprocess.run(argv, capture_output=True, text=True)
    except OSError as exc:
        raise AdapterError(f"{what}: cannot execute {argv[0]!r}: {exc}") from exc


def video_slug(video: str) -> str:
    name = Path(video).name
    stem = name.rsplit(".", 1)[0] if "." in name else name
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", stem) or "video"


def run_inference(
    adapter: ModelAdapter,
    model_ref: str,
    video: str,
    out_path,
    boxes: str = "",
):
    """Run an inference command and validate its candidate file.

    Returns the parsed frames. Any unparseable line is a hard error here,
    unlike in plain reading.
    """
    out_path = Path(out_path)
    argv = render_command(adapter.infer_command, model=model_ref, video=video, out=out_path, boxes=boxes)
    proc = _run(argv, f"inference on {video}")
    if proc.returncode != 0:
        raise AdapterError(
            f"inference on {video} exited with {proc.returncode}: {proc.stderr.strip()[-500:]}",
            proc.returncode, proc.stderr,
        )
    if not out_path.exists():
        raise AdapterError(f"inference on {video} wrote no output at {out_path}")
    try:
        frames, bad = scan_candidates(out_path)
    except ValueError as exc:
        raise AdapterError(f"inference on {video}: invalid candidates: {exc}") from exc
    if bad:
        raise AdapterError(f"inference on {video}: {bad} unparseable line(s) in {out_path}")
    return frames


@dataclass
class TrainingOutcome:
    model_ref: str
    previous: str
    ok: bool
    returncode: Optional[int] = None
    message: str = ""


def run_training(adapter: ModelAdapter, model_ref: str, dataset_path, out_dir="") -> TrainingOutcome:
    """Retrain from ``dataset_path``; the last stdout line is the new model_ref.

    Failure keeps the old model_ref and reports ``ok=False``.
    """
    read_dataset(dataset_path)
    if not adapter.train_command:
        return TrainingOutcome(model_ref, model_ref, True, None, "no train command")
    argv = render_command(adapter.train_command, model=model_ref, dataset=dataset_path, out=out_dir)
    proc = _run(argv, f"training on {dataset_path}")
    lines = [ln.strip() for ln in proc.stdout.splitlines() if ln.strip()]
    if proc.returncode != 0 or not lines:
        msg = f"exit {proc.returncode}" if proc.returncode else "no model_ref on stdout"
        log.warning("training on %s failed (%s); keeping %s", dataset_path, msg, model_ref)
        return TrainingOutcome(model_ref, model_ref, False, proc.returncode, msg)
    return TrainingOutcome(lines[-1], model_ref, True, 0)


def _iter_dir(work_dir: Path, k: int) -> Path:
    return work_dir / f"iter-{k}"


def load_reports(work_dir) -> list[dict]:
    """Completed iteration reports, in order, stopping at the first gap."""
    reports = []
    k = 1
    while (path := _iter_dir(Path(work_dir), k) / REPORT).exists():
        reports.append(json.loads(path.read_text(encoding="utf-8")))
        k += 1
    return reports


def _process_video(cfg: LoopConfig, fcfg: FilterConfig, idir: Path, video: str, det_ref: str, pose_ref: str):
    slug = video_slug(video)
    cand = idir / f"candidates-{slug}.jsonl"
    t0 = time.perf_counter()
    if cfg.pose_adapter.infer_command:
        boxes = idir / f"boxes-{slug}.jsonl"
        run_inference(cfg.detector_adapter, det_ref, video, boxes)
        frames = run_inference(cfg.pose_adapter, pose_ref, video, cand, boxes=str(boxes))
    else:
        frames = run_inference(cfg.detector_adapter, det_ref, video, cand)
    t1 = time.perf_counter()
    result = curate(frames, fcfg)
    filtered = idir / f"filtered-{slug}.jsonl"
    write_candidates(result.frames, filtered)
    write_rejections(result.rejections, rejections_path(filtered))
    return slug, result, {"inference": t1 - t0, "filter": time.perf_counter() - t1}


def run_iteration(cfg: LoopConfig, fcfg: FilterConfig, k: int, det_ref: str, pose_ref: str) -> dict:
    slugs = [video_slug(v) for v in cfg.videos]
    if len(set(slugs)) != len(slugs):
        raise AdapterError(f"video names collide after normalisation: {slugs}")
    idir = _iter_dir(cfg.work_dir, k)
    if idir.exists():
        shutil.rmtree(idir)  # leftovers of an interrupted run
    idir.mkdir(parents=True)
    started = time.perf_counter()

    with ThreadPoolExecutor(max_workers=min(cfg.workers, len(cfg.videos))) as pool:
        results = list(pool.map(
            lambda v: _process_video(cfg, fcfg, idir, v, det_ref, pose_ref), cfg.videos))

    frames = [f for _, r, _ in results for f in r.frames]
    records = [rec for _, r, _ in results for rec in r.rejections]
    emitted = emit_datasets(
        frames, idir, fcfg,
        frames_in=sum(r.frames_in for _, r, _ in results),
        rejections=records,
        extra={"iteration": k, "videos": slugs},
    )

    t_train = time.perf_counter()
    det = run_training(cfg.detector_adapter, det_ref, emitted.detection_path, idir)
    pose = run_training(cfg.pose_adapter, pose_ref, emitted.pose_path, idir)
    finished = time.perf_counter()

    report = {
        "iteration": k,
        "videos": {s: r.counts() for s, r, _ in results},
        "counts": emitted.manifest["counts"],
        "rejections": emitted.manifest["rejections"],
        "model_refs": {
            "detector": {"before": det_ref, "after": det.model_ref},
            "pose": {"before": pose_ref, "after": pose.model_ref},
        },
        "training": {
            "detector": {"ok": det.ok, "returncode": det.returncode, "message": det.message},
            "pose": {"ok": pose.ok, "returncode": pose.returncode, "message": pose.message},
        },
        "degraded": not (det.ok and pose.ok),
        "durations_s": {
            "videos": {s: d for s, _, d in results},
            "training": finished - t_train,
            "total": finished - started,
        },
    }
    tmp = idir / (REPORT + ".tmp")
    tmp.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    tmp.replace(idir / REPORT)
    return report


def run_loop(cfg: LoopConfig, fcfg: FilterConfig, stop_after: Optional[int] = None) -> list[dict]:
    """Run (or resume) the loop up to ``cfg.iterations``; returns all reports.

    Iterations with a persisted report are skipped and their output model
    refs are carried forward. ``stop_after`` ends the run early after that
    iteration number, which is how an interrupted run is simulated.
    """
    cfg.work_dir.mkdir(parents=True, exist_ok=True)
    reports = load_reports(cfg.work_dir)[: cfg.iterations]
    det_ref = cfg.detector_adapter.model_ref
    pose_ref = cfg.pose_adapter.model_ref
    if reports:
        det_ref = reports[-1]["model_refs"]["detector"]["after"]
        pose_ref = reports[-1]["model_refs"]["pose"]["after"]
        log.info("resuming after iteration %d", len(reports))
    for k in range(len(reports) + 1, cfg.iterations + 1):
        if stop_after is not None and k > stop_after:
            break
        log.info("iteration %d: detector=%s pose=%s", k, det_ref, pose_ref)
        report = run_iteration(cfg, fcfg, k, det_ref, pose_ref)
        reports.append(report)
        det_ref = report["model_refs"]["detector"]["after"]
        pose_ref = report["model_refs"]["pose"]["after"]
    return reports


__all__ = [
    "AdapterError", "load_reports", "render_command", "run_inference",
    "run_iteration", "run_loop", "run_training",
]
