"""Test-time online learning: fine-tune the initializer, encoder and decoder
on affine-warped copies of the first annotated frame while the convolutional
LSTM stays frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers, model
from .data import AffineRanges, DataError, affine_sample, prepare_frame, prepare_mask
from .tensor import GradTape, Tensor, backward
from .training import Checkpoint

TUNED_GROUPS = ("initializer", "encoder", "decoder")


@dataclass
class OnlineConfig:
    iterations: int = 200
    lr: float = 1e-5
    ranges: AffineRanges = field(default_factory=AffineRanges)
    seed: int = 0
    probe_pairs: int = 8   # held-out pairs used to report before/after loss


@dataclass
class OnlineReport:
    initial_loss: float
    final_loss: float
    losses: list[float]


def _pair_tensors(img: np.ndarray, mask: np.ndarray, dtype) -> tuple[Tensor, Tensor]:
    h, w = img.shape[:2]
    return (Tensor(prepare_frame(img, h, w, dtype)),
            Tensor(prepare_mask(mask, h, w, dtype)))


def _pair_loss(params: model.ModelParams, cfg: model.ModelConfig,
               pair0, pair1) -> Tensor:
    """Two-frame unroll: pair0 initializes, pair1 is predicted and scored."""
    x0, y0 = pair0
    x1, y1 = pair1
    feedback = "self_prediction" if cfg.encoder_variant == "rgb_plus_prev_mask" else "none"
    pred = model.unroll([x0, x1], y0, params, cfg, feedback=feedback)[0]
    return layers.bce_loss(pred, y1)


def _draw_pair(x0, y0, rng, ranges, dtype):
    return _pair_tensors(*affine_sample(x0, y0, rng, ranges), dtype)


def online_finetune(ck: Checkpoint, x0: np.ndarray, y0: np.ndarray,
                    cfg: OnlineConfig) -> tuple[Checkpoint, OnlineReport]:
    """Adapt a trained model to one object from its first frame and mask.

    Each iteration draws two independent affine warps of (x0, y0); the first
    acts as the initial frame and mask, the second as the frame to segment.
    Only the initializer, encoder and decoder groups are updated; the
    convlstm group is bit-identical on return. A non-finite loss aborts the
    loop and returns the last finite state.
    """
    if cfg.iterations < 1:
        raise ValueError("online_finetune needs iterations >= 1")
    if x0.shape[:2] != (ck.model_config.input_h, ck.model_config.input_w):
        raise DataError(f"online_finetune: frame is {x0.shape[:2]}, model expects "
                        f"{(ck.model_config.input_h, ck.model_config.input_w)}")
    if not np.isin(y0, (0, 1)).all():
        raise DataError("online_finetune: mask must be binary")
    if not y0.any():
        raise DataError("online_finetune: mask is empty")

    params = ck.params.copy()
    mcfg = ck.model_config
    dtype = next(iter(params.named().values())).dtype
    tuned = params.subset(TUNED_GROUPS)
    opt = layers.AdamState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    probes = [(_draw_pair(x0, y0, rng, cfg.ranges, dtype),
               _draw_pair(x0, y0, rng, cfg.ranges, dtype))
              for _ in range(cfg.probe_pairs)]

    def probe_loss() -> float:
        vals = [_pair_loss(params, mcfg, p0, p1).item() for p0, p1 in probes]
        return float(np.mean(vals)) if vals else float("nan")

    initial = probe_loss()
    losses: list[float] = []
    for _ in range(cfg.iterations):
        pair0 = _draw_pair(x0, y0, rng, cfg.ranges, dtype)
        pair1 = _draw_pair(x0, y0, rng, cfg.ranges, dtype)
        with GradTape():
            loss = _pair_loss(params, mcfg, pair0, pair1)
            value = loss.item()
            if not np.isfinite(value):
                break
            backward(loss)
        layers.adam_step(tuned, opt)
        for t in params.convlstm.values():
            t.grad = None   # frozen: gradients flow through but are discarded
        losses.append(value)

    out = Checkpoint(mcfg, params, None, ck.step, ck.epoch, ck.stage, ck.feedback,
                     ck.stage2_step, ck.curriculum_step, None)
    return out, OnlineReport(initial, probe_loss(), losses)
