"""Neural building blocks: conv2d, 2x2 max pooling, upsampling convolution,
masked binary cross-entropy, Xavier initialization and the Adam optimizer.

All spatial tensors are channels-first (C, H, W) without a batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, TRAIN_DTYPE, _record, accumulate_grad

BCE_EPS = 1e-7


@dataclass
class Conv2dParams:
    weights: Tensor  # (out_ch, in_ch, kh, kw)
    bias: Tensor     # (out_ch,)
    stride: int = 1
    padding: int = 0


def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    """2-D convolution of a (C, H, W) input, differentiable in x, weights, bias.

    Runs as im2col + GEMM; the unfolded column matrix is built once and
    shared with the backward pass.
    """
    w, b, s, pad = p.weights, p.bias, p.stride, p.padding
    if x.data.ndim != 3:
        raise ShapeError(f"conv2d expects (C, H, W), got {x.shape}")
    out_ch, in_ch, kh, kw = w.shape
    c, h, wd = x.shape
    if c != in_ch:
        raise ShapeError(f"conv2d: input has {c} channels, weights expect {in_ch}")
    if h + 2 * pad < kh or wd + 2 * pad < kw:
        raise ShapeError(f"conv2d: input {h}x{wd} too small for kernel {kh}x{kw} at pad {pad}")
    if (h + 2 * pad - kh) % s or (wd + 2 * pad - kw) % s:
        raise ShapeError(f"conv2d: non-integral output extent for input {h}x{wd}, "
                         f"kernel {kh}x{kw}, stride {s}, pad {pad}")
    oh = (h + 2 * pad - kh) // s + 1
    ow = (wd + 2 * pad - kw) // s + 1

    if pad:
        xp = np.zeros((c, h + 2 * pad, wd + 2 * pad), dtype=x.data.dtype)
        xp[:, pad:pad + h, pad:pad + wd] = x.data
    else:
        xp = x.data
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::s, ::s]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, oh * ow)
    wmat = w.data.reshape(out_ch, -1)
    val = (wmat @ cols).reshape(out_ch, oh, ow)
    val += b.data[:, None, None]
    out = Tensor(val, requires_grad=x.requires_grad or w.requires_grad or b.requires_grad)

    def pull(g):
        gmat = g.reshape(out_ch, -1)
        if b.requires_grad:
            accumulate_grad(b, g.sum(axis=(1, 2)))
        if w.requires_grad:
            accumulate_grad(w, (gmat @ cols.T).reshape(w.shape))
        if x.requires_grad:
            dcols = (wmat.T @ gmat).reshape(c, kh, kw, oh, ow)
            gx = np.zeros_like(xp)
            for ky in range(kh):
                for kx in range(kw):
                    gx[:, ky:ky + s * oh:s, kx:kx + s * ow:s] += dcols[:, ky, kx]
            accumulate_grad(x, gx[:, pad:pad + h, pad:pad + wd] if pad else gx)

    return _record(out, pull)


def max_pool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties route the gradient to the first
    window element in row-major order."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2 requires even extents, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    windows = (x.data.reshape(c, h2, 2, w2, 2)
               .transpose(0, 1, 3, 2, 4)
               .reshape(c, h2, w2, 4))
    idx = windows.argmax(axis=-1)
    val = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    out = Tensor(val, requires_grad=x.requires_grad)

    def pull(g):
        if x.requires_grad:
            scatter = np.zeros_like(windows)
            np.put_along_axis(scatter, idx[..., None], g[..., None], axis=-1)
            accumulate_grad(x, scatter.reshape(c, h2, w2, 2, 2)
                            .transpose(0, 1, 3, 2, 4)
                            .reshape(c, h, w))

    return _record(out, pull)


def upsample_nearest2(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x spatial upsampling."""
    c, h, w = x.shape
    val = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
    out = Tensor(val, requires_grad=x.requires_grad)

    def pull(g):
        if x.requires_grad:
            accumulate_grad(x, g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)))

    return _record(out, pull)


# nearest-2x upsample followed by a 5x5 tap lands each output phase on at most
# a 3x3 neighborhood of source pixels; these matrices fold the 5 kernel rows
# (or columns) down to the 3 effective taps of each phase
_PHASE_FOLD = (
    np.array([[1, 1, 0, 0, 0], [0, 0, 1, 1, 0], [0, 0, 0, 0, 1]], dtype=np.float64),
    np.array([[1, 0, 0, 0, 0], [0, 1, 1, 0, 0], [0, 0, 0, 1, 1]], dtype=np.float64),
)
# (36, 25): maps a flattened 5x5 kernel to the four flattened 3x3 phase kernels
_PHASE_FOLD_ALL = np.concatenate(
    [np.kron(_PHASE_FOLD[py], _PHASE_FOLD[px]) for py in (0, 1) for px in (0, 1)], axis=0)


def _fold_phase_kernels(w: Tensor) -> Tensor:
    """Rewrite a 5x5 kernel on the 2x-upsampled grid as four 3x3 kernels on
    the source grid, stacked along the output-channel axis in phase order
    (0,0), (0,1), (1,0), (1,1)."""
    o, c, _, _ = w.shape
    fold = _PHASE_FOLD_ALL.astype(w.data.dtype)
    flat = (w.data.reshape(o * c, 25) @ fold.T)          # (o*c, 4*9)
    stacked = (flat.reshape(o, c, 4, 3, 3)
               .transpose(2, 0, 1, 3, 4)
               .reshape(4 * o, c, 3, 3))
    out = Tensor(stacked, requires_grad=w.requires_grad)

    def pull(g):
        if w.requires_grad:
            gflat = (g.reshape(4, o, c, 9)
                     .transpose(1, 2, 0, 3)
                     .reshape(o * c, 36))
            accumulate_grad(w, (gflat @ fold).reshape(w.shape))

    return _record(out, pull)


def _tile_channels(b: Tensor, n: int) -> Tensor:
    out = Tensor(np.tile(b.data, n), requires_grad=b.requires_grad)
    size = b.shape[0]

    def pull(g):
        if b.requires_grad:
            accumulate_grad(b, g.reshape(n, size).sum(axis=0))

    return _record(out, pull)


def _interleave_phases2(z: Tensor, out_ch: int) -> Tensor:
    """Scatter 4 phase blocks of channels onto the 2x output grid."""
    _, h, w = z.shape
    val = np.empty((out_ch, 2 * h, 2 * w), dtype=z.dtype)
    for k, (py, px) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        val[:, py::2, px::2] = z.data[k * out_ch:(k + 1) * out_ch]
    out = Tensor(val, requires_grad=z.requires_grad)

    def pull(g):
        if z.requires_grad:
            accumulate_grad(z, np.concatenate(
                [g[:, py::2, px::2] for py, px in ((0, 0), (0, 1), (1, 0), (1, 1))], axis=0))

    return _record(out, pull)


def upsample_conv(x: Tensor, p: Conv2dParams) -> Tensor:
    """Nearest-neighbor 2x upsample followed by a same-size 5x5 convolution.

    Computed in phase-decomposed form (four folded 3x3 kernels on the source
    grid, one fused GEMM), which is exactly equivalent to composing
    upsample_nearest2 with conv2d at padding 2 but avoids the 4x redundancy.
    """
    kh, kw = p.weights.shape[2], p.weights.shape[3]
    if kh != 5 or kw != 5:
        raise ShapeError(f"upsample_conv requires a 5x5 kernel, got {kh}x{kw}")
    if p.stride != 1 or p.padding != 2:
        raise ShapeError("upsample_conv requires stride 1 and padding 2")
    out_ch = p.weights.shape[0]
    folded = Conv2dParams(_fold_phase_kernels(p.weights),
                          _tile_channels(p.bias, 4), stride=1, padding=1)
    return _interleave_phases2(conv2d(x, folded), out_ch)


def bce_loss(pred: Tensor, target: Tensor | None, valid: bool = True) -> Tensor:
    """Mean binary cross-entropy over pixels, with predictions clamped to
    [1e-7, 1 - 1e-7] before the logs.

    When valid is False the result is an exact zero that contributes no
    gradient, so unannotated steps cost nothing.
    """
    if not valid:
        dtype = pred.dtype if isinstance(pred, Tensor) else TRAIN_DTYPE
        return Tensor(np.zeros((), dtype=dtype))
    if target is None:
        raise ValueError("bce_loss needs a target when valid is True")
    if pred.shape != target.shape:
        raise ShapeError(f"bce_loss: shape mismatch {pred.shape} vs {target.shape}")
    y = target.data
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("bce_loss target must be binary")
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    val = -(y * np.log(p) + (1.0 - y) * np.log1p(-p)).mean()
    out = Tensor(np.asarray(val, dtype=pred.dtype), requires_grad=pred.requires_grad)

    def pull(g):
        if pred.requires_grad:
            inside = (pred.data >= BCE_EPS) & (pred.data <= 1.0 - BCE_EPS)
            gp = (p - y) / (p * (1.0 - p) * p.size)
            accumulate_grad(pred, float(g) * gp * inside)

    return _record(out, pull)


def xavier_init(shape, rng_seed, dtype=TRAIN_DTYPE) -> Tensor:
    """Uniform Xavier (Glorot) initialization, deterministic given the seed.

    For conv weights (out_ch, in_ch, kh, kw) the fans include the kernel
    area; rank-2 shapes use (fan_out, fan_in) directly.
    """
    shape = tuple(int(d) for d in shape)
    if len(shape) < 2:
        raise ShapeError(f"xavier_init needs rank >= 2, got shape {shape}")
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_in = shape[1] * receptive
    fan_out = shape[0] * receptive
    a = np.sqrt(6.0 / (fan_in + fan_out))
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return Tensor(rng.uniform(-a, a, size=shape).astype(dtype), requires_grad=True)


@dataclass
class AdamState:
    """Per-parameter first/second moments plus shared step counter."""
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One Adam update with bias correction; clears gradients afterward."""
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.grad = None
