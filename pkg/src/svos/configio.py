"""key=value config files for training, synthesis and online fine-tuning.

Lines are KEY=VALUE; blank lines and #-comments are ignored; unknown keys
are rejected.
"""

from __future__ import annotations

from pathlib import Path

from .data import AffineRanges, SynthConfig
from .model import make_config
from .online import OnlineConfig
from .training import ConfigError, TrainConfig


def parse_kv_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected KEY=VALUE, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"{path}:{ln}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _pop(kv: dict, key: str, cast, default):
    if key not in kv:
        return default
    raw = kv.pop(key)
    if raw.lower() in ("none", "") and default is None:
        return None
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def _bool(raw: str) -> bool:
    if raw.lower() in ("1", "true", "yes", "on"):
        return True
    if raw.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def _reject_unknown(kv: dict, what: str) -> None:
    if kv:
        raise ConfigError(f"unknown {what} keys: {', '.join(sorted(kv))}")


def train_config_from_file(path) -> TrainConfig:
    kv = parse_kv_file(path)
    preset = kv.pop("preset", "desk")
    model_cfg = make_config(
        preset,
        init_variant=kv.pop("init_variant", "network"),
        encoder_variant=kv.pop("encoder_variant", "rgb_only"),
    )
    cfg = TrainConfig(
        model=model_cfg,
        dataset=kv.pop("dataset", None),
        lr=_pop(kv, "lr", float, 1e-5),
        epochs=_pop(kv, "epochs", int, 80),
        max_steps=_pop(kv, "max_steps", int, None),
        t_min=_pop(kv, "t_min", int, 5),
        t_max=_pop(kv, "t_max", int, 11),
        plateau_window=_pop(kv, "plateau_window", int, 200),
        plateau_lookback=_pop(kv, "plateau_lookback", int, 400),
        plateau_threshold=_pop(kv, "plateau_threshold", float, 0.01),
        curriculum_window=_pop(kv, "curriculum_window", int, 200),
        curriculum_lookback=_pop(kv, "curriculum_lookback", int, 400),
        curriculum_threshold=_pop(kv, "curriculum_threshold", float, 0.01),
        seed=_pop(kv, "seed", int, 0),
        checkpoint_interval=_pop(kv, "checkpoint_interval", int, 0),
        steps_per_epoch=_pop(kv, "steps_per_epoch", int, None),
        grad_clip=_pop(kv, "grad_clip", float, None),
    )
    _reject_unknown(kv, "train config")
    return cfg


def synth_config_from_file(path) -> SynthConfig:
    kv = parse_kv_file(path)
    shapes = tuple(s.strip() for s in kv.pop("shapes", "disc,square,triangle").split(",") if s.strip())
    cfg = SynthConfig(
        height=_pop(kv, "height", int, 64),
        width=_pop(kv, "width", int, 112),
        num_frames=_pop(kv, "frames", int, 10),
        num_objects=_pop(kv, "objects", int, 1),
        shape_set=shapes,
        min_radius=_pop(kv, "min_radius", float, 7.0),
        max_radius=_pop(kv, "max_radius", float, 12.0),
        velocity_min=_pop(kv, "velocity_min", float, 1.0),
        velocity_max=_pop(kv, "velocity_max", float, 3.0),
        drift_rate=_pop(kv, "drift_rate", float, 0.0),
        jitter=_pop(kv, "jitter", float, 0.0),
        num_occluders=_pop(kv, "occluders", int, 0),
        annotation_stride=_pop(kv, "annotation_stride", int, 1),
        fps=_pop(kv, "fps", float, 30.0),
        seed=_pop(kv, "seed", int, 0),
    )
    _reject_unknown(kv, "synth config")
    return cfg


def online_config_from_file(path) -> OnlineConfig:
    kv = parse_kv_file(path)
    ranges = AffineRanges(
        rotation=_pop(kv, "rotation", float, 10.0),
        scale_lo=_pop(kv, "scale_lo", float, 0.9),
        scale_hi=_pop(kv, "scale_hi", float, 1.1),
        translate=_pop(kv, "translate", float, 0.1),
        shear=_pop(kv, "shear", float, 5.0),
    )
    cfg = OnlineConfig(
        iterations=_pop(kv, "iterations", int, 200),
        lr=_pop(kv, "lr", float, 1e-5),
        ranges=ranges,
        seed=_pop(kv, "seed", int, 0),
        probe_pairs=_pop(kv, "probe_pairs", int, 8),
    )
    if cfg.iterations < 1:
        raise ConfigError("iterations must be >= 1")
    _reject_unknown(kv, "online config")
    return cfg
