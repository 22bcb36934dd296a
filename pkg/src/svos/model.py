"""The four-network segmentation model: an initializer that encodes the first
frame and mask into LSTM states, a per-frame encoder, a convolutional LSTM
core, and an upsampling decoder, unrolled over a frame sequence.

Two ablation variants are supported: the initializer can be replaced by a
plain mask downsample ("mask_reshape"), and the encoder can take the previous
step's mask as a fourth input channel ("rgb_plus_prev_mask").
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import layers
from .data import resize_bilinear
from .tensor import (ShapeError, Tensor, TRAIN_DTYPE, concat_channels, mul,
                     relu, sigmoid, split_channels, stack_channels)
from .tensor import add as tadd

INIT_VARIANTS = ("network", "mask_reshape")
ENCODER_VARIANTS = ("rgb_only", "rgb_plus_prev_mask")
FEEDBACK_MODES = ("none", "self_prediction", "teacher_forcing")
GROUPS = ("initializer", "encoder", "convlstm", "decoder")
_GATES = ("i", "f", "g", "o")


@dataclass(frozen=True)
class ModelConfig:
    preset: str
    input_h: int
    input_w: int
    encoder_channels: tuple[int, ...]   # output channels per pooling stage
    stage_convs: tuple[int, ...]        # conv layers per stage
    fc_channels: int | None             # 1x1 conv standing in for the first FC layer
    lstm_channels: int
    decoder_channels: tuple[int, ...]
    init_variant: str = "network"
    encoder_variant: str = "rgb_only"

    def __post_init__(self):
        p = len(self.encoder_channels)
        if p == 0 or len(self.stage_convs) != p:
            raise ValueError("encoder_channels and stage_convs must be nonempty and aligned")
        if len(self.decoder_channels) != p:
            raise ValueError(f"need one decoder channel per pooling stage ({p})")
        if self.input_h % (1 << p) or self.input_w % (1 << p):
            raise ValueError(f"input {self.input_h}x{self.input_w} not divisible by 2^{p}")
        if self.init_variant not in INIT_VARIANTS:
            raise ValueError(f"unknown init_variant {self.init_variant!r}")
        if self.encoder_variant not in ENCODER_VARIANTS:
            raise ValueError(f"unknown encoder_variant {self.encoder_variant!r}")

    @property
    def num_stages(self) -> int:
        return len(self.encoder_channels)

    @property
    def feature_h(self) -> int:
        return self.input_h >> self.num_stages

    @property
    def feature_w(self) -> int:
        return self.input_w >> self.num_stages

    def with_variants(self, init_variant: str | None = None,
                      encoder_variant: str | None = None) -> "ModelConfig":
        return replace(self,
                       init_variant=init_variant or self.init_variant,
                       encoder_variant=encoder_variant or self.encoder_variant)


def make_config(preset: str, **overrides) -> ModelConfig:
    """Build a named preset; `paper` is the full-scale topology, `desk` trains
    on a CPU in minutes, `desk-micro` is small enough for finite differences."""
    if preset == "paper":
        cfg = ModelConfig("paper", 256, 448,
                          encoder_channels=(64, 128, 256, 512, 512),
                          stage_convs=(2, 2, 3, 3, 3),
                          fc_channels=4096,
                          lstm_channels=512,
                          decoder_channels=(512, 256, 128, 64, 64))
    elif preset == "desk":
        cfg = ModelConfig("desk", 64, 112,
                          encoder_channels=(16, 32, 64, 64),
                          stage_convs=(1, 1, 1, 1),
                          fc_channels=None,
                          lstm_channels=64,
                          decoder_channels=(64, 32, 16, 16))
    elif preset == "desk-micro":
        cfg = ModelConfig("desk-micro", 16, 28,
                          encoder_channels=(4, 8),
                          stage_convs=(1, 1),
                          fc_channels=None,
                          lstm_channels=8,
                          decoder_channels=(8, 4))
    else:
        raise ValueError(f"unknown preset {preset!r}")
    return replace(cfg, **overrides) if overrides else cfg


@dataclass
class LstmState:
    c: Tensor
    h: Tensor

    def __post_init__(self):
        if self.c.shape != self.h.shape:
            raise ShapeError(f"LstmState: c {self.c.shape} != h {self.h.shape}")


@dataclass
class ModelParams:
    """Named parameter tensors in four fixed groups; the convlstm group is
    separable so online fine-tuning can freeze it."""

    initializer: dict[str, Tensor] = field(default_factory=dict)
    encoder: dict[str, Tensor] = field(default_factory=dict)
    convlstm: dict[str, Tensor] = field(default_factory=dict)
    decoder: dict[str, Tensor] = field(default_factory=dict)

    def group(self, name: str) -> dict[str, Tensor]:
        if name not in GROUPS:
            raise KeyError(name)
        return getattr(self, name)

    def named(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for g in GROUPS:
            for k, t in self.group(g).items():
                out[f"{g}.{k}"] = t
        return out

    def subset(self, groups) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for g in groups:
            for k, t in self.group(g).items():
                out[f"{g}.{k}"] = t
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(*({k: Tensor(t.data.copy(), requires_grad=True)
                              for k, t in self.group(g).items()} for g in GROUPS))


def _backbone_specs(cfg: ModelConfig, in_ch: int) -> list[tuple[str, int, int, int]]:
    """(name, in_ch, out_ch, kernel) for each conv of the shared backbone."""
    specs = []
    ch = in_ch
    for i, (out_ch, n_convs) in enumerate(zip(cfg.encoder_channels, cfg.stage_convs)):
        for j in range(n_convs):
            specs.append((f"block{i}.conv{j}", ch, out_ch, 3))
            ch = out_ch
    if cfg.fc_channels:
        specs.append(("fc", ch, cfg.fc_channels, 1))
        ch = cfg.fc_channels
    return specs


def _backbone_out_channels(cfg: ModelConfig) -> int:
    return cfg.fc_channels or cfg.encoder_channels[-1]


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Qualified parameter name -> shape, in construction order. This is the
    single source of truth for building, checkpointing and validating."""
    shapes: dict[str, tuple[int, ...]] = {}

    def conv_pair(group: str, name: str, in_ch: int, out_ch: int, k: int):
        shapes[f"{group}.{name}.w"] = (out_ch, in_ch, k, k)
        shapes[f"{group}.{name}.b"] = (out_ch,)

    if cfg.init_variant == "network":
        for name, ci, co, k in _backbone_specs(cfg, 4):
            conv_pair("initializer", name, ci, co, k)
        bo = _backbone_out_channels(cfg)
        conv_pair("initializer", "head_c", bo, cfg.lstm_channels, 1)
        conv_pair("initializer", "head_h", bo, cfg.lstm_channels, 1)

    enc_in = 3 if cfg.encoder_variant == "rgb_only" else 4
    for name, ci, co, k in _backbone_specs(cfg, enc_in):
        conv_pair("encoder", name, ci, co, k)
    conv_pair("encoder", "head", _backbone_out_channels(cfg), cfg.lstm_channels, 1)

    for gate in _GATES:
        conv_pair("convlstm", f"conv_{gate}", 2 * cfg.lstm_channels, cfg.lstm_channels, 3)

    ch = cfg.lstm_channels
    for i, out_ch in enumerate(cfg.decoder_channels):
        conv_pair("decoder", f"up{i}", ch, out_ch, 5)
        ch = out_ch
    conv_pair("decoder", "out", ch, 1, 5)
    return shapes


def build_params(cfg: ModelConfig, seed: int, dtype=TRAIN_DTYPE) -> ModelParams:
    """Xavier weights, zero biases, except the forget-gate bias which starts
    at exactly 1. The initializer group is empty under mask_reshape."""
    rng = np.random.default_rng(seed)
    params = ModelParams()
    for qual, shape in param_shapes(cfg).items():
        group, name = qual.split(".", 1)
        if name.endswith(".w"):
            t = layers.xavier_init(shape, rng, dtype)
        elif qual == "convlstm.conv_f.b":
            t = Tensor(np.ones(shape, dtype=dtype), requires_grad=True)
        else:
            t = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)
        params.group(group)[name] = t
    return params


def _conv(x: Tensor, group: dict[str, Tensor], name: str) -> Tensor:
    w = group[f"{name}.w"]
    return layers.conv2d(x, layers.Conv2dParams(w, group[f"{name}.b"],
                                                stride=1, padding=w.shape[-1] // 2))


def _backbone_forward(x: Tensor, group: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    for i, n_convs in enumerate(cfg.stage_convs):
        for j in range(n_convs):
            x = relu(_conv(x, group, f"block{i}.conv{j}"))
        x = layers.max_pool2(x)
    if cfg.fc_channels:
        x = relu(_conv(x, group, "fc"))
    return x


def _check_frame(x: Tensor, cfg: ModelConfig, channels: int, what: str) -> None:
    if x.shape != (channels, cfg.input_h, cfg.input_w):
        raise ShapeError(f"{what}: expected {(channels, cfg.input_h, cfg.input_w)}, got {x.shape}")


def _check_binary_mask(y: Tensor, what: str) -> None:
    if not np.isin(y.data, (0.0, 1.0)).all():
        raise ValueError(f"{what}: mask must be binary")


def initializer_forward(x0: Tensor, y0: Tensor, params: ModelParams,
                        cfg: ModelConfig) -> LstmState:
    """Encode the first frame and its mask into the initial (c, h) states.

    The mask_reshape variant skips the network entirely: the mask is
    bilinearly downsampled to the feature grid and tiled across channels.
    """
    _check_frame(x0, cfg, 3, "initializer x0")
    _check_frame(y0, cfg, 1, "initializer y0")
    _check_binary_mask(y0, "initializer")
    if cfg.init_variant == "mask_reshape":
        small = resize_bilinear(y0.data[0], cfg.feature_h, cfg.feature_w)
        tiled = np.broadcast_to(small.astype(y0.data.dtype),
                                (cfg.lstm_channels, cfg.feature_h, cfg.feature_w))
        return LstmState(Tensor(tiled.copy()), Tensor(tiled.copy()))
    feat = _backbone_forward(concat_channels(x0, y0), params.initializer, cfg)
    c0 = relu(_conv(feat, params.initializer, "head_c"))
    h0 = relu(_conv(feat, params.initializer, "head_h"))
    return LstmState(c0, h0)


def encoder_forward(xt: Tensor, prev_mask: Tensor | None, params: ModelParams,
                    cfg: ModelConfig) -> Tensor:
    """Extract per-frame features at the LSTM grid resolution."""
    _check_frame(xt, cfg, 3, "encoder frame")
    if cfg.encoder_variant == "rgb_plus_prev_mask":
        if prev_mask is None:
            raise ValueError("encoder variant rgb_plus_prev_mask needs prev_mask")
        _check_frame(prev_mask, cfg, 1, "encoder prev_mask")
        xt = concat_channels(xt, prev_mask)
    elif prev_mask is not None:
        raise ValueError("rgb_only encoder takes no prev_mask")
    feat = _backbone_forward(xt, params.encoder, cfg)
    return relu(_conv(feat, params.encoder, "head"))


def convlstm_step(xt: Tensor, prev: LstmState, params: ModelParams) -> LstmState:
    """One convolutional LSTM step: sigmoid gates, ReLU state paths.

        i, f, o = sigmoid(conv([x; h_prev]))
        g       = relu(conv([x; h_prev]))
        c       = f * c_prev + i * g
        h       = o * relu(c)
    """
    if xt.shape != prev.h.shape:
        raise ShapeError(f"convlstm_step: input {xt.shape} vs state {prev.h.shape}")
    ch = xt.shape[0]
    z = concat_channels(xt, prev.h)
    # the four gate convolutions share one im2col + GEMM
    w = stack_channels([params.convlstm[f"conv_{g}.w"] for g in _GATES])
    b = stack_channels([params.convlstm[f"conv_{g}.b"] for g in _GATES])
    zi, zf, zg, zo = split_channels(
        layers.conv2d(z, layers.Conv2dParams(w, b, stride=1, padding=1)), [ch] * 4)
    i, f, o = sigmoid(zi), sigmoid(zf), sigmoid(zo)
    g = relu(zg)
    c = tadd(mul(f, prev.c), mul(i, g))
    h = mul(o, relu(c))
    return LstmState(c, h)


def decoder_forward(ht: Tensor, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """Decode a hidden state back to a full-resolution probability mask."""
    expected = (cfg.lstm_channels, cfg.feature_h, cfg.feature_w)
    if ht.shape != expected:
        raise ShapeError(f"decoder: expected {expected}, got {ht.shape}")
    x = ht
    for i in range(cfg.num_stages):
        w = params.decoder[f"up{i}.w"]
        p = layers.Conv2dParams(w, params.decoder[f"up{i}.b"], stride=1, padding=2)
        x = relu(layers.upsample_conv(x, p))
    return sigmoid(_conv(x, params.decoder, "out"))


def unroll(frames: list[Tensor], y0: Tensor, params: ModelParams, cfg: ModelConfig,
           feedback: str = "none", gt_masks: list[Tensor | None] | None = None) -> list[Tensor]:
    """Run the full recurrence over a clip and return predictions for frames
    1..T-1.

    feedback selects what the rgb_plus_prev_mask encoder sees as the previous
    mask: ground truth under teacher_forcing (falling back to the model's own
    prediction at steps with no annotation), or always the model's own
    prediction under self_prediction. The rgb_only encoder uses none.
    """
    if len(frames) < 2:
        raise ValueError(f"unroll needs at least 2 frames, got {len(frames)}")
    if feedback not in FEEDBACK_MODES:
        raise ValueError(f"unknown feedback mode {feedback!r}")
    if cfg.encoder_variant == "rgb_only":
        if feedback != "none":
            raise ValueError("feedback requires the rgb_plus_prev_mask encoder variant")
    else:
        if feedback == "none":
            raise ValueError("rgb_plus_prev_mask encoder needs a feedback mode")
        if feedback == "teacher_forcing":
            if gt_masks is None or len(gt_masks) != len(frames):
                n = "none" if gt_masks is None else len(gt_masks)
                raise ValueError(f"teacher_forcing needs one (optional) mask per frame, "
                                 f"got {n} for {len(frames)} frames")

    state = initializer_forward(frames[0], y0, params, cfg)
    preds: list[Tensor] = []
    prev_pred = y0
    for t in range(1, len(frames)):
        if cfg.encoder_variant == "rgb_plus_prev_mask":
            mask_in = prev_pred
            if feedback == "teacher_forcing" and gt_masks[t - 1] is not None:
                mask_in = gt_masks[t - 1]
            feat = encoder_forward(frames[t], mask_in, params, cfg)
        else:
            feat = encoder_forward(frames[t], None, params, cfg)
        state = convlstm_step(feat, state, params)
        pred = decoder_forward(state.h, params, cfg)
        preds.append(pred)
        prev_pred = pred
    return preds
