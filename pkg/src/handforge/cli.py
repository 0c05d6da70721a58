"""Command line entry point.

Exit codes: 0 success, 1 validation/usage error, 2 I/O error, 3 adapter failure.
A JSON summary goes to stdout, diagnostics to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, parse_config, write_config
from .dataset_io import (
    emit_datasets,
    force_requested,
    read_candidates,
    read_rejections,
    rejections_path,
    scan_candidates,
    write_candidates,
    write_rejections,
)
from .loop import AdapterError, run_loop
from .metrics import confidence_sweep, evaluate_frames
from .pipeline import CurationResult, curate
from .spatial import histogram
from .synth import CorruptionSpec, SceneSpec, corrupt, generate, scene_config, scene_to_dict

log = logging.getLogger("handforge")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_ADAPTER = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _load_config(args):
    return parse_config(args.config, _overrides(args.set))


def _emit(summary: dict) -> None:
    json.dump(summary, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _summary(result: CurationResult) -> dict:
    return {"counts": result.counts(), "rejections": result.histogram()}


def cmd_filter(args) -> int:
    cfg = _load_config(args).filter
    frames, bad = scan_candidates(args.input)
    result = curate(frames, cfg, workers=args.workers, temporal=not args.spatial_only)
    write_candidates(result.frames, args.output)
    write_rejections(result.rejections, rejections_path(args.output))
    summary = _summary(result)
    summary["malformed_lines"] = bad
    _emit(summary)
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    cfg = _load_config(args).filter
    frames, bad = scan_candidates(args.input)
    if args.no_filter:
        result = CurationResult(len(frames), frames)
    else:
        result = curate(frames, cfg, workers=args.workers)
    emitted = emit_datasets(
        result.frames, args.out_dir, cfg,
        frames_in=result.frames_in, rejections=result.rejections, force=args.force,
    )
    _emit({
        "detection_dataset": str(emitted.detection_path),
        "pose_dataset": str(emitted.pose_path),
        "manifest": str(emitted.manifest_path),
        "counts": emitted.manifest["counts"],
        "rejections": emitted.manifest["rejections"],
        "malformed_lines": bad,
    })
    return EXIT_OK


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_evaluate(args) -> int:
    preds = read_candidates(args.predictions)
    gts = read_candidates(args.ground_truth)
    report = evaluate_frames(preds, gts)
    if args.sweep_c_hd or args.sweep_c_pe:
        if not args.config:
            raise ConfigError("--config", "a config is required for threshold sweeps")
        cfg = _load_config(args).filter
        report["sweep"] = confidence_sweep(
            preds, gts, cfg,
            _floats(args.sweep_c_hd) if args.sweep_c_hd else [cfg.c_hd],
            _floats(args.sweep_c_pe) if args.sweep_c_pe else [cfg.c_pe],
            iou_threshold=args.sweep_iou,
        )
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit({k: v for k, v in report.items() if k not in ("pr_curves", "sweep")} | (
        {"sweep": report["sweep"]} if "sweep" in report else {}))
    return EXIT_OK


def cmd_run(args) -> int:
    config = _load_config(args)
    loop = config.loop
    if loop is None:
        raise ConfigError("videos", "config has no loop section")
    if args.iterations is not None:
        loop = replace(loop, iterations=args.iterations)
    if args.work_dir:
        loop = replace(loop, work_dir=Path(args.work_dir))
    if args.workers_given:
        loop = replace(loop, workers=args.workers)
    reports = run_loop(loop, config.filter, stop_after=args.stop_after)
    _emit({
        "iterations": len(reports),
        "work_dir": str(loop.work_dir),
        "reports": [
            {"iteration": r["iteration"], "counts": r["counts"], "degraded": r["degraded"],
             "model_refs": r["model_refs"]}
            for r in reports
        ],
    })
    return EXIT_OK


def cmd_synth(args) -> int:
    scene = SceneSpec(
        n_hands=args.hands, image_width=args.width, image_height=args.height,
        motion=args.motion, velocity=tuple(_floats(args.velocity)),
        amplitude=tuple(_floats(args.amplitude)), period=args.period,
        n_frames=args.frames, base_hand_scale=args.scale, seed=args.seed,
    )
    spec = CorruptionSpec(
        keypoint_jitter_sigma=args.jitter, outlier_rate=args.outlier_rate,
        outlier_magnitude=args.outlier_magnitude, isolated_outliers=args.isolated,
        dropout_rate=args.dropout_rate, false_detection_rate=args.false_rate, seed=args.seed,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = generate(scene)
    noisy, ledger = corrupt(truth, spec)
    write_candidates(truth, out / "truth.jsonl")
    write_candidates(noisy, out / "candidates.jsonl")
    (out / "ledger.json").write_text(ledger.to_json() + "\n", encoding="utf-8")
    write_config(scene_config(scene, truth), out / "scene.cfg")
    kinds = {}
    for e in ledger.entries:
        kinds[e["kind"]] = kinds.get(e["kind"], 0) + 1
    _emit({"frames": len(truth), "scene": scene_to_dict(scene), "ledger": kinds, "out_dir": str(out)})
    return EXIT_OK


def cmd_stats(args) -> int:
    path = Path(args.path)
    if path.suffix == ".json":
        manifest = json.loads(path.read_text(encoding="utf-8"))
        _emit({"counts": manifest["counts"], "rejections": manifest["rejections"]})
        return EXIT_OK
    frames = read_candidates(path)
    side = rejections_path(path)
    records = read_rejections(side) if side.exists() else []
    result = CurationResult(len(frames), frames, records)
    counts = result.counts()
    del counts["frames_in"]
    _emit({"counts": counts, "rejections": histogram(records)})
    return EXIT_OK


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", "-c", required=config_required, help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--workers", type=int, default=None, help="worker count (default: all cores)")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="handforge", description="Curate hand pose pseudo-labels.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("filter", help="spatial + temporal filtering of a candidate file")
    _common(p)
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--spatial-only", action="store_true")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("build-dataset", help="filter candidates and emit the two training datasets")
    _common(p)
    p.add_argument("input")
    p.add_argument("out_dir")
    p.add_argument("--no-filter", action="store_true", help="input is already curated")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("evaluate", help="precision/recall/AUC of predictions against ground truth")
    _common(p, config_required=False)
    p.add_argument("predictions")
    p.add_argument("ground_truth")
    p.add_argument("--out", help="write the full report (with PR curves) here")
    p.add_argument("--sweep-c-hd", help="comma-separated detection thresholds")
    p.add_argument("--sweep-c-pe", help="comma-separated pose thresholds")
    p.add_argument("--sweep-iou", type=float, default=0.75)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="run or resume the self-training loop")
    _common(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--work-dir")
    p.add_argument("--stop-after", type=int, help="stop after this iteration")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="write a synthetic truth/candidate/ledger triple")
    _common(p, config_required=False)
    p.add_argument("out_dir")
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--hands", type=int, default=1)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--motion", choices=("static", "linear", "sinusoidal"), default="sinusoidal")
    p.add_argument("--velocity", default="0,0")
    p.add_argument("--amplitude", default="20,10")
    p.add_argument("--period", type=float, default=60.0)
    p.add_argument("--scale", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--outlier-rate", type=float, default=0.0)
    p.add_argument("--outlier-magnitude", type=float, default=75.0)
    p.add_argument("--isolated", action="store_true")
    p.add_argument("--dropout-rate", type=float, default=0.0)
    p.add_argument("--false-rate", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="counts and rejection histogram of a filter output or manifest")
    _common(p, config_required=False)
    p.add_argument("path")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    args.workers_given = args.workers is not None
    if args.workers is None:
        args.workers = os.cpu_count() or 1
    args.force = force_requested(args.force)
    try:
        return args.func(args)
    except AdapterError as exc:
        print(f"handforge: adapter failure: {exc}", file=sys.stderr)
        return EXIT_ADAPTER
    except OSError as exc:
        print(f"handforge: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"handforge: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
