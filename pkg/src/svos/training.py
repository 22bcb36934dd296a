"""Offline training: random clip sampling, the two-stage annotated-only /
all-frames schedule, teacher-forcing to self-prediction curriculum for the
previous-mask encoder variant, and bit-exact binary checkpoints.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import layers, model
from .data import DataError, prepare_frame, prepare_mask
from .tensor import GradTape, Tensor, add, backward, mul

CHECKPOINT_MAGIC = b"SVOS"
CHECKPOINT_VERSION = 1

STAGES = ("annotated_only", "all_frames")


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    model: model.ModelConfig
    dataset: str | None = None
    lr: float = 1e-5
    epochs: int = 80
    max_steps: int | None = None          # overrides epochs * steps_per_epoch
    t_min: int = 5
    t_max: int = 11
    plateau_window: int = 200
    plateau_lookback: int = 400
    plateau_threshold: float = 0.01
    curriculum_window: int = 200
    curriculum_lookback: int = 400
    curriculum_threshold: float = 0.01
    seed: int = 0
    checkpoint_interval: int = 0          # steps between checkpoints; 0 = final only
    steps_per_epoch: int | None = None    # defaults to the dataset size
    grad_clip: float | None = None        # off unless the divergence guard bites

    def __post_init__(self):
        if self.t_min < 2 or self.t_max < self.t_min:
            raise ConfigError(f"bad clip-length range [{self.t_min}, {self.t_max}]")
        for name in ("plateau_window", "plateau_lookback", "plateau_threshold",
                     "curriculum_window", "curriculum_lookback", "curriculum_threshold"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")


@dataclass
class Clip:
    """One training sample: frames plus per-step optional masks and validity."""
    video_id: str
    object_id: str
    start: int
    raw_stride: int
    frames: list[np.ndarray]               # (3, h, w) float32 in [0, 1]
    masks: list[np.ndarray | None]         # (1, h, w) float32 in {0, 1}
    valid: list[bool]


def sample_training_clip(dataset, rng: np.random.Generator, cfg: TrainConfig,
                         stage: str = "annotated_only") -> Clip:
    """Draw a random object and T consecutive frames from a random video.

    annotated_only walks the annotated grid (raw stride = annotation_stride),
    so every step carries a target. all_frames walks raw frames starting at an
    annotated one; steps without ground truth get valid=False. Videos too
    short for the drawn T are simply resampled.
    """
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}")
    if not len(dataset):
        raise ConfigError("empty dataset")
    ih, iw = cfg.model.input_h, cfg.model.input_w
    t_len = int(rng.integers(cfg.t_min, cfg.t_max + 1))
    fallback = None
    for attempt in range(200):
        video = dataset[int(rng.integers(len(dataset)))]
        objs = video.object_ids
        if not objs:
            continue
        obj = objs[int(rng.integers(len(objs)))]
        ann = video.annotated_indices(obj)
        stride = video.annotation_stride
        if stage == "annotated_only":
            ann_set = set(ann)
            starts = [k for k in ann
                      if all(k + j * stride in ann_set for j in range(t_len))
                      and k + (t_len - 1) * stride < video.n_frames]
            raw_stride = stride
        else:
            starts = [k for k in ann if k + t_len - 1 < video.n_frames]
            raw_stride = 1
        if not starts:
            continue
        k = starts[int(rng.integers(len(starts)))]
        idx = [k + j * raw_stride for j in range(t_len)]
        frames = [prepare_frame(video.load_frame(i), ih, iw) for i in idx]
        masks, valid = [], []
        for i in idx:
            m = video.mask_at(obj, i)
            masks.append(None if m is None else prepare_mask(m, ih, iw))
            valid.append(m is not None)
        clip = Clip(video.video_id, obj, k, raw_stride, frames, masks, valid)
        if any(valid[1:]):
            return clip
        fallback = clip  # keep one zero-target clip in case nothing better exists
    if fallback is not None:
        return fallback
    raise DataError(f"no video supports a clip of {t_len} frames at stage {stage!r}")


def clip_loss(params: model.ModelParams, cfg: model.ModelConfig, clip: Clip,
              feedback: str) -> tuple[Tensor, int]:
    """Mean masked cross-entropy over the clip's valid steps.

    Steps with valid=False contribute an exact zero and their mask entries
    are never read, neither as targets nor as teacher-forcing inputs.
    """
    frames = [Tensor(f) for f in clip.frames]
    gated = [Tensor(m) if (v and m is not None) else None
             for m, v in zip(clip.masks, clip.valid)]
    if gated[0] is None:
        raise DataError("clip has no mask at its first frame")
    preds = model.unroll(frames, gated[0], params, cfg, feedback=feedback,
                         gt_masks=gated if feedback == "teacher_forcing" else None)
    n_valid = sum(1 for v in clip.valid[1:] if v)
    if n_valid == 0:
        return Tensor(np.zeros((), dtype=np.float32)), 0
    total = None
    for j in range(1, len(clip.frames)):
        term = layers.bce_loss(preds[j - 1], gated[j], valid=clip.valid[j])
        if clip.valid[j]:
            total = term if total is None else add(total, term)
    return mul(total, 1.0 / n_valid), n_valid


class PlateauDetector:
    """Fires when the windowed moving-average loss stops improving: the MA
    over the last `window` steps must beat the MA from `lookback` steps ago
    by at least `threshold` (relative), else the plateau is declared."""

    def __init__(self, window: int, lookback: int, threshold: float):
        self.window = int(window)
        self.lookback = int(lookback)
        self.threshold = float(threshold)
        self.history: list[float] = []

    def update(self, value: float) -> bool:
        self.history.append(value)
        need = self.window + self.lookback
        if len(self.history) < need:
            return False
        cur = float(np.mean(self.history[-self.window:]))
        prev = float(np.mean(self.history[-need:-self.lookback]))
        return (prev - cur) < self.threshold * max(abs(prev), 1e-12)


@dataclass
class Checkpoint:
    model_config: model.ModelConfig
    params: model.ModelParams
    adam: layers.AdamState | None = None
    step: int = 0
    epoch: int = 0
    stage: str = "annotated_only"
    feedback: str = "none"
    stage2_step: int | None = None
    curriculum_step: int | None = None
    rng_state: dict | None = None


def _clip_gradients(params: dict[str, Tensor], max_norm: float) -> None:
    total = 0.0
    for p in params.values():
        total += float((p.grad * p.grad).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            p.grad *= scale


def train(cfg: TrainConfig, dataset=None, out_dir=None, log=None) -> Checkpoint:
    """Run the full offline loop: sample, unroll, masked loss, backward, Adam.

    Stage transitions fire at most once each: the first plateau switches
    annotated_only -> all_frames; for the previous-mask encoder variant a
    second plateau then switches teacher forcing -> self-prediction. Emits
    (step, stage, loss) rows via `log` and checkpoints on schedule.
    """
    if dataset is None:
        if not cfg.dataset:
            raise ConfigError("train needs a dataset (path or loaded videos)")
        from .data import load_manifest
        dataset = load_manifest(cfg.dataset)
    if not len(dataset):
        raise ConfigError("empty dataset")

    params = model.build_params(cfg.model, seed=cfg.seed)
    opt = layers.AdamState(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 1])
    trainable = params.named()

    spe = cfg.steps_per_epoch or len(dataset)
    total_steps = cfg.max_steps if cfg.max_steps else cfg.epochs * spe
    mask_variant = cfg.model.encoder_variant == "rgb_plus_prev_mask"
    feedback = "teacher_forcing" if mask_variant else "none"
    stage = "annotated_only"
    stage2_step: int | None = None
    curriculum_step: int | None = None
    stage_detector = PlateauDetector(cfg.plateau_window, cfg.plateau_lookback,
                                     cfg.plateau_threshold)
    curriculum_detector: PlateauDetector | None = None

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    step = 0
    for step in range(1, total_steps + 1):
        clip = sample_training_clip(dataset, rng, cfg, stage)
        tape = GradTape()
        with tape:
            loss, n_valid = clip_loss(params, cfg.model, clip, feedback)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f"loss diverged at step {step}")
            if n_valid > 0:
                backward(loss)
        if n_valid > 0:
            if cfg.grad_clip:
                _clip_gradients(trainable, cfg.grad_clip)
            layers.adam_step(trainable, opt)

        if log is not None:
            log(step, stage, value)

        if stage2_step is None and stage_detector.update(value):
            stage, stage2_step = "all_frames", step
            if mask_variant:
                curriculum_detector = PlateauDetector(
                    cfg.curriculum_window, cfg.curriculum_lookback, cfg.curriculum_threshold)
        elif curriculum_detector is not None and curriculum_step is None \
                and curriculum_detector.update(value):
            feedback, curriculum_step = "self_prediction", step

        if out_dir is not None and cfg.checkpoint_interval \
                and step % cfg.checkpoint_interval == 0 and step < total_steps:
            ck = Checkpoint(cfg.model, params, opt, step, step // spe, stage, feedback,
                            stage2_step, curriculum_step, rng.bit_generator.state)
            save_checkpoint(ck, out_dir / f"model_step{step:07d}.svos")

    final = Checkpoint(cfg.model, params, opt, step, step // spe if spe else 0,
                       stage, feedback, stage2_step, curriculum_step,
                       rng.bit_generator.state)
    if out_dir is not None:
        save_checkpoint(final, out_dir / "model_final.svos")
    return final


# ---------------------------------------------------------------------------
# Checkpoint serialization: magic, version, JSON meta block, named float32
# tensor records, trailing CRC32.


def _config_to_meta(cfg: model.ModelConfig) -> dict:
    return {
        "preset": cfg.preset, "input_h": cfg.input_h, "input_w": cfg.input_w,
        "encoder_channels": list(cfg.encoder_channels),
        "stage_convs": list(cfg.stage_convs),
        "fc_channels": cfg.fc_channels,
        "lstm_channels": cfg.lstm_channels,
        "decoder_channels": list(cfg.decoder_channels),
        "init_variant": cfg.init_variant,
        "encoder_variant": cfg.encoder_variant,
    }


def _config_from_meta(meta: dict) -> model.ModelConfig:
    return model.ModelConfig(
        preset=meta["preset"], input_h=meta["input_h"], input_w=meta["input_w"],
        encoder_channels=tuple(meta["encoder_channels"]),
        stage_convs=tuple(meta["stage_convs"]),
        fc_channels=meta["fc_channels"],
        lstm_channels=meta["lstm_channels"],
        decoder_channels=tuple(meta["decoder_channels"]),
        init_variant=meta["init_variant"],
        encoder_variant=meta["encoder_variant"],
    )


def save_checkpoint(ck: Checkpoint, path) -> None:
    meta = {
        "model_config": _config_to_meta(ck.model_config),
        "step": ck.step, "epoch": ck.epoch, "stage": ck.stage,
        "feedback": ck.feedback, "stage2_step": ck.stage2_step,
        "curriculum_step": ck.curriculum_step,
        "rng_state": ck.rng_state,
        "adam": None if ck.adam is None else {
            "lr": ck.adam.lr, "beta1": ck.adam.beta1, "beta2": ck.adam.beta2,
            "epsilon": ck.adam.epsilon, "t": ck.adam.t},
    }
    records: list[tuple[str, np.ndarray]] = []
    for name, t in ck.params.named().items():
        records.append((f"params.{name}", t.data))
    if ck.adam is not None:
        for name in sorted(ck.adam.m):
            records.append((f"adam.m.{name}", ck.adam.m[name]))
            records.append((f"adam.v.{name}", ck.adam.v[name]))

    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    blob = json.dumps(meta, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for name, arr in records:
        if arr.dtype != np.float32:
            raise CheckpointError(f"checkpoint tensors must be float32, {name} is {arr.dtype}")
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    raw = buf.getvalue()
    crc = zlib.crc32(raw) & 0xFFFFFFFF
    Path(path).write_bytes(raw + struct.pack("<I", crc))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"truncated checkpoint: {self.path}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 16:
        raise CheckpointError(f"truncated checkpoint: {path}")
    body, stored = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if (zlib.crc32(body) & 0xFFFFFFFF) != stored:
        raise CheckpointError(f"checksum mismatch in {path}")
    r = _Reader(body, path)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    meta = json.loads(r.take(r.u32()).decode())
    tensors: dict[str, np.ndarray] = {}
    while r.pos < len(body):  # records run straight through to the checksum
        name = r.take(r.u32()).decode()
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims)
        tensors[name] = arr.astype(np.float32)  # own, writable copy

    cfg = _config_from_meta(meta["model_config"])
    expected = model.param_shapes(cfg)
    params = model.ModelParams()
    for qual, shape in expected.items():
        key = f"params.{qual}"
        if key not in tensors:
            raise CheckpointError(f"{path}: missing tensor {qual}")
        arr = tensors.pop(key)
        if arr.shape != shape:
            raise CheckpointError(f"{path}: {qual} has shape {arr.shape}, "
                                  f"config expects {shape}")
        group, name = qual.split(".", 1)
        params.group(group)[name] = Tensor(arr, requires_grad=True)
    stray = [k for k in tensors if k.startswith("params.")]
    if stray:
        raise CheckpointError(f"{path}: unexpected tensors {stray}")

    adam = None
    if meta["adam"] is not None:
        a = meta["adam"]
        adam = layers.AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"],
                                epsilon=a["epsilon"], t=a["t"])
        for key, arr in tensors.items():
            if key.startswith("adam.m."):
                adam.m[key[len("adam.m."):]] = arr
            elif key.startswith("adam.v."):
                adam.v[key[len("adam.v."):]] = arr
    return Checkpoint(cfg, params, adam, meta["step"], meta["epoch"], meta["stage"],
                      meta["feedback"], meta["stage2_step"], meta["curriculum_step"],
                      meta["rng_state"])


def params_digest(params: model.ModelParams, groups=None) -> str:
    """SHA-256 over the named tensors (optionally restricted to groups)."""
    h = hashlib.sha256()
    for name, t in sorted(params.named().items()):
        if groups is not None and name.split(".", 1)[0] not in groups:
            continue
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
