"""Finite-difference verification of every analytic gradient: elementwise
ops, each layer, and the fully unrolled model at the desk-micro size.
Everything runs in float64.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import layers, model
from .tensor import (CHECK_DTYPE, GradTape, Tensor, backward, clamp,
                     finite_diff_grad, tmean, tsum)
from . import tensor as tensor_ops

TENSOR_EPS, TENSOR_TOL = 1e-4, 1e-6
LAYER_EPS, LAYER_TOL = 1e-3, 1e-4
MODEL_EPS, MODEL_TOL = 1e-3, 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < self.tol


@dataclass
class SuiteReport:
    results: list[CheckResult]
    elapsed: float

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results)

    @property
    def worst(self) -> CheckResult:
        return max(self.results, key=lambda r: r.max_rel_err / r.tol)


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1.0, np.abs(numeric))
    return float((np.abs(analytic - numeric) / denom).max())


def _t(rng, shape, lo=-1.0, hi=1.0, requires_grad=True) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=requires_grad,
                  dtype=CHECK_DTYPE)


def _away_from_kink(rng, shape, eps, lo=-1.0, hi=1.0) -> Tensor:
    """Uniform values kept clear of 0 so central differences never straddle
    the relu kink."""
    x = rng.uniform(lo, hi, size=shape)
    while (np.abs(x) < 10 * eps).any():
        redraw = np.abs(x) < 10 * eps
        x[redraw] = rng.uniform(lo, hi, size=int(redraw.sum()))
    return Tensor(x, requires_grad=True, dtype=CHECK_DTYPE)


def _grad_of(build_loss, wrt: Tensor) -> np.ndarray:
    # leaf tensors persist across checks, so clear the probed slot first
    wrt.grad = None
    with GradTape():
        backward(build_loss())
    g = wrt.grad
    wrt.grad = None
    return np.zeros_like(wrt.data) if g is None else g


def _check(name, build_loss, wrt: Tensor, eps, tol) -> CheckResult:
    analytic = _grad_of(build_loss, wrt)
    numeric = finite_diff_grad(lambda x: _loss_with(build_loss, wrt, x), wrt, eps)
    return CheckResult(name, rel_err(analytic, numeric.data), tol)


def _loss_with(build_loss, slot: Tensor, value: Tensor) -> float:
    saved = slot.data
    slot.data = value.data
    try:
        return build_loss().item()
    finally:
        slot.data = saved


def check_tensor_ops(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    shape = (3, 5)
    results = []
    a = _t(rng, shape)
    b = _t(rng, shape)
    proj = Tensor(rng.uniform(-1, 1, size=shape), dtype=CHECK_DTYPE)

    def score(out):
        return tsum(tensor_ops.mul(out, proj))

    for name in ("add", "sub", "mul"):
        for label, wrt in (("a", a), ("b", b)):
            results.append(_check(
                f"tensor.{name}/{label}",
                lambda name=name: score(tensor_ops.elementwise(name, a, b)),
                wrt, TENSOR_EPS, TENSOR_TOL))
    x = _away_from_kink(rng, shape, TENSOR_EPS)
    results.append(_check("tensor.sigmoid", lambda: score(tensor_ops.sigmoid(x)),
                          x, TENSOR_EPS, TENSOR_TOL))
    results.append(_check("tensor.relu", lambda: score(tensor_ops.relu(x)),
                          x, TENSOR_EPS, TENSOR_TOL))
    pos = _t(rng, shape, lo=0.1, hi=1.2)
    results.append(_check("tensor.log", lambda: score(tensor_ops.log(pos)),
                          pos, TENSOR_EPS, TENSOR_TOL))
    cl = _t(rng, shape)
    results.append(_check("tensor.clamp",
                          lambda: score(clamp(cl, -0.5, 0.5)), cl, TENSOR_EPS, TENSOR_TOL))
    results.append(_check("tensor.sum", lambda: tsum(tensor_ops.mul(a, b)), a,
                          TENSOR_EPS, TENSOR_TOL))
    results.append(_check("tensor.mean", lambda: tmean(tensor_ops.mul(a, b)), a,
                          TENSOR_EPS, TENSOR_TOL))
    return results


def check_layers(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    def proj_for(shape):
        return Tensor(rng.uniform(-1, 1, size=shape), dtype=CHECK_DTYPE)

    # conv2d, stride 1 "same" and a strided case
    for tag, (cin, cout, h, w, k, stride, pad) in (
            ("s1", (3, 4, 6, 7, 3, 1, 1)), ("s2", (2, 3, 9, 9, 5, 2, 2))):
        x = _t(rng, (cin, h, w))
        wt = _t(rng, (cout, cin, k, k))
        bt = _t(rng, (cout,))
        p = layers.Conv2dParams(wt, bt, stride, pad)
        out_shape = layers.conv2d(x.detach(), layers.Conv2dParams(
            wt.detach(), bt.detach(), stride, pad)).shape
        proj = proj_for(out_shape)

        def loss(x=x, p=p, proj=proj):
            return tsum(tensor_ops.mul(layers.conv2d(x, p), proj))

        for label, wrt in (("x", x), ("w", wt), ("b", bt)):
            results.append(_check(f"layers.conv2d_{tag}/{label}", loss, wrt,
                                  LAYER_EPS, LAYER_TOL))

    # max pooling: distinct values so eps never flips an argmax
    vals = rng.permutation(4 * 8 * 8).astype(np.float64).reshape(4, 8, 8) / 50.0
    xp = Tensor(vals, requires_grad=True, dtype=CHECK_DTYPE)
    proj = proj_for((4, 4, 4))
    results.append(_check("layers.max_pool2/x",
                          lambda: tsum(tensor_ops.mul(layers.max_pool2(xp), proj)),
                          xp, LAYER_EPS, LAYER_TOL))

    # upsampling convolution
    x = _t(rng, (3, 4, 5))
    wt = _t(rng, (2, 3, 5, 5))
    bt = _t(rng, (2,))
    pu = layers.Conv2dParams(wt, bt, 1, 2)
    proj = proj_for((2, 8, 10))

    def up_loss():
        return tsum(tensor_ops.mul(layers.upsample_conv(x, pu), proj))

    for label, wrt in (("x", x), ("w", wt), ("b", bt)):
        results.append(_check(f"layers.upsample_conv/{label}", up_loss, wrt,
                              LAYER_EPS, LAYER_TOL))

    # cross-entropy; keep predictions off the steep log tails, where the
    # third derivative alone would dominate a central difference at this eps
    pred = _t(rng, (1, 6, 6), lo=0.1, hi=0.9)
    target = Tensor((rng.random((1, 6, 6)) > 0.5).astype(np.float64), dtype=CHECK_DTYPE)
    results.append(_check("layers.bce_loss/pred",
                          lambda: layers.bce_loss(pred, target), pred,
                          LAYER_EPS, LAYER_TOL))
    return results


def _micro_inputs(rng, cfg):
    frames = [Tensor(rng.uniform(0, 1, size=(3, cfg.input_h, cfg.input_w)),
                     dtype=CHECK_DTYPE) for _ in range(3)]
    masks = [Tensor((rng.random((1, cfg.input_h, cfg.input_w)) > 0.6).astype(np.float64),
                    dtype=CHECK_DTYPE) for _ in range(3)]
    return frames, masks


def check_model(seed: int = 0, directions_per_group: int = 8) -> list[CheckResult]:
    """End-to-end check of the T=3 unrolled loss at the desk-micro size.

    Each parameter group's gradient is probed with random-direction central
    differences (several unit directions spanning the whole group). A
    direction exercises every element of every tensor in the group, and a
    wrong backward anywhere shifts the directional derivative by a term of
    the gradient's own magnitude. Per-element probes are impractical here:
    perturbing one bias by the full eps shifts hundreds of relu inputs at
    once, so some straddle their kink and the difference quotient picks up
    O(eps) noise above the tolerance even though the analytic gradient is
    exact; spreading the step across a unit direction shrinks those
    crossings quadratically.
    """
    results = []
    variants = (("rgb_only", "none"), ("rgb_plus_prev_mask", "self_prediction"))
    for encoder_variant, feedback in variants:
        rng = np.random.default_rng(seed + 17)
        cfg = model.make_config("desk-micro", encoder_variant=encoder_variant)
        params = model.build_params(cfg, seed=seed, dtype=CHECK_DTYPE)
        # evaluate at a generic point: fresh zero biases park relu inputs with
        # all-zero receptive fields exactly on the kink, where any finite
        # difference disagrees with the subgradient convention by O(1)
        for name, t in params.named().items():
            if name.endswith(".b"):
                mag = rng.uniform(5e-3, 2e-2, size=t.shape)
                t.data += np.where(rng.random(t.shape) < 0.5, -mag, mag)
        frames, masks = _micro_inputs(rng, cfg)

        def loss_tensor():
            preds = model.unroll(frames, masks[0], params, cfg, feedback=feedback)
            total = layers.bce_loss(preds[0], masks[1])
            total = tensor_ops.add(total, layers.bce_loss(preds[1], masks[2]))
            return tensor_ops.mul(total, 0.5)

        with GradTape():
            backward(loss_tensor())
        analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                    for name, t in params.named().items()}
        for t in params.named().values():
            t.grad = None

        for group in model.GROUPS:
            tensors = [(f"{group}.{k}", t) for k, t in params.group(group).items()]
            if not tensors:
                continue
            total_size = sum(t.size for _, t in tensors)
            worst = 0.0
            for _ in range(directions_per_group):
                direction = {name: rng.standard_normal(t.shape) for name, t in tensors}
                norm = np.sqrt(sum(float((d * d).sum()) for d in direction.values()))
                expected = sum(float((analytic[name] * d).sum())
                               for name, d in direction.items()) / norm
                for name, t in tensors:
                    t.data += (MODEL_EPS / norm) * direction[name]
                hi = loss_tensor().item()
                for name, t in tensors:
                    t.data -= (2 * MODEL_EPS / norm) * direction[name]
                lo = loss_tensor().item()
                for name, t in tensors:
                    t.data += (MODEL_EPS / norm) * direction[name]
                numeric = (hi - lo) / (2 * MODEL_EPS)
                worst = max(worst, abs(expected - numeric) / max(1.0, abs(numeric)))
            results.append(CheckResult(
                f"model.{encoder_variant}/{group} ({len(tensors)} tensors, "
                f"{total_size} params)", worst, MODEL_TOL))
    return results


def run_full_suite(seed: int = 0) -> SuiteReport:
    t0 = time.perf_counter()
    results = check_tensor_ops(seed) + check_layers(seed) + check_model(seed)
    return SuiteReport(results, time.perf_counter() - t0)
