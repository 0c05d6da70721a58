"""Filter and loop configuration, plus the flat ``key = value`` file format."""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Optional

from .core import BONES, REFERENCE_BONE


class ConfigError(ValueError):
    """Invalid or incomplete configuration. ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# Bone length relative to the index proximal phalanx (5, 6). These are
# defaults only; every entry can be overridden via bone_ratios.<i>-<j>.
DEFAULT_BONE_RATIOS: dict[tuple[int, int], float] = {
    (0, 1): 1.00, (1, 2): 1.20, (2, 3): 0.80, (3, 4): 0.70,
    (0, 5): 2.20, (5, 6): 1.00, (6, 7): 0.65, (7, 8): 0.60,
    (0, 9): 2.10, (9, 10): 1.10, (10, 11): 0.75, (11, 12): 0.65,
    (0, 13): 2.00, (13, 14): 1.05, (14, 15): 0.70, (15, 16): 0.65,
    (0, 17): 1.90, (17, 18): 0.80, (18, 19): 0.55, (19, 20): 0.55,
}

REQUIRED_KEYS = ("s_bone", "s_area_max", "s_area_min", "s_count", "t_vmax", "c_hd", "c_pe")


@dataclass(frozen=True)
class FilterConfig:
    s_bone: float
    s_area_max: float
    s_area_min: float
    s_count: int
    t_vmax: float
    c_hd: float = 0.9
    c_pe: float = 0.2
    slack: float = 1.15
    bone_ratios: Mapping[tuple[int, int], float] = field(
        default_factory=lambda: dict(DEFAULT_BONE_RATIOS)
    )
    interp_max_gap: int = 5
    assoc_iou_min: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.s_bone > 0:
            raise ConfigError("s_bone", f"must be > 0, got {self.s_bone}")
        if not 0.0 <= self.s_area_min < self.s_area_max <= 1.0:
            key = "s_area_min" if not 0.0 <= self.s_area_min < 1.0 else "s_area_max"
            raise ConfigError(
                key,
                f"need 0 <= s_area_min < s_area_max <= 1, got {self.s_area_min}, {self.s_area_max}",
            )
        if int(self.s_count) != self.s_count or self.s_count < 1:
            raise ConfigError("s_count", f"must be an integer >= 1, got {self.s_count}")
        if not self.t_vmax > 0:
            raise ConfigError("t_vmax", f"must be > 0, got {self.t_vmax}")
        for key in ("c_hd", "c_pe", "assoc_iou_min"):
            value = getattr(self, key)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(key, f"must lie in [0, 1], got {value}")
        if not self.slack >= 1.0:
            raise ConfigError("slack", f"must be >= 1, got {self.slack}")
        if int(self.interp_max_gap) != self.interp_max_gap or self.interp_max_gap < 0:
            raise ConfigError("interp_max_gap", f"must be an integer >= 0, got {self.interp_max_gap}")
        missing = [b for b in BONES if b not in self.bone_ratios]
        if missing:
            raise ConfigError("bone_ratios", f"missing bones {missing}")
        extra = [b for b in self.bone_ratios if b not in BONES]
        if extra:
            raise ConfigError("bone_ratios", f"unknown bones {extra}")
        for bone, ratio in self.bone_ratios.items():
            if not ratio > 0:
                raise ConfigError(_ratio_key(bone), f"must be > 0, got {ratio}")
        if self.bone_ratios[REFERENCE_BONE] != 1.0:
            raise ConfigError(_ratio_key(REFERENCE_BONE), "reference bone ratio must be 1.0")

    def bone_bound(self, bone: tuple[int, int]) -> float:
        return self.s_bone * self.bone_ratios[bone] * self.slack

    def to_flat(self) -> dict[str, float | int]:
        """Flat key/value view, the same keys the config file uses."""
        out: dict[str, float | int] = {}
        for f in fields(self):
            if f.name == "bone_ratios":
                continue
            out[f.name] = getattr(self, f.name)
        for bone in BONES:
            out[_ratio_key(bone)] = self.bone_ratios[bone]
        return out


HANCO = FilterConfig(s_bone=50, s_area_max=0.75, s_area_min=0.15, s_count=1, t_vmax=25)
ASSEMBLY = FilterConfig(s_bone=80, s_area_max=0.80, s_area_min=0.05, s_count=2, t_vmax=45)


@dataclass(frozen=True)
class ModelAdapter:
    """External model driven through command templates.

    Templates are split shell-style and may use the placeholders
    ``{model}``, ``{video}``, ``{out}``, ``{dataset}`` and ``{boxes}``.
    """

    infer_command: str = ""
    train_command: str = ""
    model_ref: str = ""


@dataclass(frozen=True)
class LoopConfig:
    work_dir: Path
    videos: tuple[str, ...]
    detector_adapter: ModelAdapter
    pose_adapter: ModelAdapter
    iterations: int = 3
    workers: int = 1

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ConfigError("iterations", f"must be an integer >= 1, got {self.iterations}")
        if self.workers < 1:
            raise ConfigError("workers", f"must be >= 1, got {self.workers}")
        if not self.videos:
            raise ConfigError("videos", "at least one video source is required")
        if not self.detector_adapter.infer_command:
            raise ConfigError("detector.infer_command", "required")


@dataclass(frozen=True)
class Config:
    filter: FilterConfig
    loop: Optional[LoopConfig] = None


def _ratio_key(bone: tuple[int, int]) -> str:
    return f"bone_ratios.{bone[0]}-{bone[1]}"


def _number(key: str, raw: str) -> float:
    text = raw.strip()
    scale = 1.0
    if text.endswith("%"):
        text, scale = text[:-1], 0.01
    elif text.endswith("px"):
        text = text[:-2]
    try:
        return float(text) * scale
    except ValueError:
        raise ConfigError(key, f"not a number: {raw!r}") from None


def _integer(key: str, raw: str) -> int:
    value = _number(key, raw)
    if value != int(value):
        raise ConfigError(key, f"not an integer: {raw!r}")
    return int(value)


def read_pairs(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        pairs[key] = value
    return pairs


_FLOAT_KEYS = ("s_bone", "s_area_max", "s_area_min", "t_vmax", "c_hd", "c_pe", "slack", "assoc_iou_min")
_INT_KEYS = ("s_count", "interp_max_gap")
_LOOP_PREFIXES = ("detector.", "pose.")
_LOOP_KEYS = ("iterations", "work_dir", "videos", "workers")


def filter_config_from_pairs(pairs: Mapping[str, str]) -> FilterConfig:
    for key in REQUIRED_KEYS:
        if key not in pairs:
            raise ConfigError(key, "missing required key")
    kwargs: dict = {}
    ratios = dict(DEFAULT_BONE_RATIOS)
    for key, raw in pairs.items():
        if key in _FLOAT_KEYS:
            kwargs[key] = _number(key, raw)
        elif key in _INT_KEYS:
            kwargs[key] = _integer(key, raw)
        elif key.startswith("bone_ratios."):
            try:
                i, j = (int(p) for p in key[len("bone_ratios."):].split("-"))
            except ValueError:
                raise ConfigError(key, "expected bone_ratios.<i>-<j>") from None
            if (i, j) not in DEFAULT_BONE_RATIOS:
                raise ConfigError(key, f"({i}, {j}) is not a skeleton bone")
            ratios[(i, j)] = _number(key, raw)
        elif key in _LOOP_KEYS or key.startswith(_LOOP_PREFIXES):
            continue
        else:
            raise ConfigError(key, "unknown key")
    return FilterConfig(bone_ratios=ratios, **kwargs)


def loop_config_from_pairs(pairs: Mapping[str, str], base_dir: Path) -> Optional[LoopConfig]:
    if not any(k in pairs for k in _LOOP_KEYS) and not any(
        k.startswith(_LOOP_PREFIXES) for k in pairs
    ):
        return None

    def adapter(prefix: str) -> ModelAdapter:
        return ModelAdapter(
            infer_command=pairs.get(f"{prefix}.infer_command", ""),
            train_command=pairs.get(f"{prefix}.train_command", ""),
            model_ref=pairs.get(f"{prefix}.model_ref", ""),
        )

    work_dir = Path(pairs.get("work_dir", "work"))
    if not work_dir.is_absolute():
        work_dir = base_dir / work_dir
    videos = tuple(v.strip() for v in pairs.get("videos", "").split(",") if v.strip())
    return LoopConfig(
        work_dir=work_dir,
        videos=videos,
        detector_adapter=adapter("detector"),
        pose_adapter=adapter("pose"),
        iterations=_integer("iterations", pairs.get("iterations", "3")),
        workers=_integer("workers", pairs.get("workers", str(os.cpu_count() or 1))),
    )


def parse_config(path, overrides: Optional[Mapping[str, str]] = None) -> Config:
    """Read a config file; ``overrides`` are applied before validation."""
    path = Path(path)
    pairs = read_pairs(path.read_text(encoding="utf-8"))
    if overrides:
        pairs.update(overrides)
    return Config(
        filter=filter_config_from_pairs(pairs),
        loop=loop_config_from_pairs(pairs, path.parent),
    )


def _fmt(value) -> str:
    # repr of a plain float round-trips exactly; numpy scalars would not parse
    if hasattr(value, "__index__"):
        return str(int(value))
    return repr(float(value))


def format_config(cfg: FilterConfig, loop: Optional[LoopConfig] = None) -> str:
    lines = [f"{key} = {_fmt(value)}" for key, value in cfg.to_flat().items()]
    if loop is not None:
        lines += [
            f"iterations = {loop.iterations}",
            f"workers = {loop.workers}",
            f"work_dir = {loop.work_dir}",
            f"videos = {', '.join(loop.videos)}",
        ]
        for prefix, ad in (("detector", loop.detector_adapter), ("pose", loop.pose_adapter)):
            lines += [
                f"{prefix}.infer_command = {ad.infer_command}",
                f"{prefix}.train_command = {ad.train_command}",
                f"{prefix}.model_ref = {ad.model_ref}",
            ]
    return "\n".join(lines) + "\n"


def write_config(cfg: FilterConfig, path, loop: Optional[LoopConfig] = None) -> None:
    Path(path).write_text(format_config(cfg, loop), encoding="utf-8")


def with_overrides(cfg: FilterConfig, overrides: Mapping[str, str]) -> FilterConfig:
    """Apply string overrides to an existing config and re-validate everything."""
    pairs = {k: _fmt(v) for k, v in cfg.to_flat().items()}
    pairs.update(overrides)
    return filter_config_from_pairs(pairs)


__all__ = [
    "ASSEMBLY", "Config", "ConfigError", "DEFAULT_BONE_RATIOS", "FilterConfig", "HANCO",
    "LoopConfig", "ModelAdapter", "format_config", "parse_config", "with_overrides",
    "write_config",
]
