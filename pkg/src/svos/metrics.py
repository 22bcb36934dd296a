"""Benchmark measures: region similarity J (intersection over union), contour
accuracy F (boundary F-measure under a pixel tolerance), their mean / recall /
decay aggregates, and J-over-time curves binned by normalized video position.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model
from .data import prepare_frame, prepare_mask, resize_bilinear, resize_nearest
from .tensor import ShapeError, Tensor

CURVE_BUCKETS = 20
RECALL_THRESHOLD = 0.5
BINARIZE_THRESHOLD = 0.5


def region_similarity(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union; 1 when both masks are empty, 0 when exactly
    one is."""
    if pred.shape != gt.shape:
        raise ShapeError(f"region_similarity: {pred.shape} vs {gt.shape}")
    p = pred.astype(bool)
    g = gt.astype(bool)
    union = int(np.count_nonzero(p | g))
    if union == 0:
        return 1.0
    if not p.any() or not g.any():
        return 0.0
    return float(np.count_nonzero(p & g)) / union


def boundary_map(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one 4-neighbor outside the mask; the image
    border counts as outside."""
    m = mask.astype(bool)
    interior = np.zeros_like(m)
    interior[1:-1, 1:-1] = (m[1:-1, 1:-1] & m[:-2, 1:-1] & m[2:, 1:-1]
                            & m[1:-1, :-2] & m[1:-1, 2:])
    return m & ~interior


def default_tolerance(shape: tuple[int, int]) -> int:
    h, w = shape
    return int(math.ceil(0.008 * math.sqrt(h * h + w * w)))


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation by a Euclidean disc, via shifted ORs."""
    out = np.zeros_like(mask)
    h, w = mask.shape
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy * dy + dx * dx > radius * radius:
                continue
            ys = slice(max(dy, 0), h + min(dy, 0))
            xs = slice(max(dx, 0), w + min(dx, 0))
            ys_src = slice(max(-dy, 0), h + min(-dy, 0))
            xs_src = slice(max(-dx, 0), w + min(-dx, 0))
            out[ys, xs] |= mask[ys_src, xs_src]
    return out


def contour_accuracy(pred: np.ndarray, gt: np.ndarray,
                     tolerance_px: int | None = None) -> float:
    """Boundary F-measure: precision is the fraction of predicted boundary
    pixels within tolerance of the ground-truth boundary, recall is the
    symmetric quantity, F = 2PR / (P + R)."""
    if pred.shape != gt.shape:
        raise ShapeError(f"contour_accuracy: {pred.shape} vs {gt.shape}")
    tol = default_tolerance(pred.shape) if tolerance_px is None else int(tolerance_px)
    pb = boundary_map(pred)
    gb = boundary_map(gt)
    np_, ng = int(pb.sum()), int(gb.sum())
    if np_ == 0 and ng == 0:
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    gb_zone = _dilate(gb, tol)
    pb_zone = _dilate(pb, tol)
    precision = float(np.count_nonzero(pb & gb_zone)) / np_
    recall = float(np.count_nonzero(gb & pb_zone)) / ng
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def aggregate(per_frame: list[float]) -> tuple[float, float, float]:
    """(mean, recall, decay): recall counts frames above 0.5, decay is the
    first-quartile mean minus the last-quartile mean (quartile = ceil(N/4))."""
    if not per_frame:
        raise ValueError("aggregate needs a nonempty list")
    vals = [float(v) for v in per_frame]
    n = len(vals)
    q = math.ceil(n / 4)
    mean = sum(vals) / n
    recall = sum(1 for v in vals if v > RECALL_THRESHOLD) / n
    decay = sum(vals[:q]) / q - sum(vals[-q:]) / q
    return mean, recall, decay


@dataclass
class ObjectResult:
    video_id: str
    object_id: str
    frame_indices: list[int]
    j: list[float]
    f: list[float]
    j_mean: float = 0.0
    j_recall: float = 0.0
    j_decay: float = 0.0
    f_mean: float = 0.0
    f_recall: float = 0.0
    f_decay: float = 0.0

    def __post_init__(self):
        self.j_mean, self.j_recall, self.j_decay = aggregate(self.j)
        self.f_mean, self.f_recall, self.f_decay = aggregate(self.f)


@dataclass
class MetricReport:
    objects: list[ObjectResult]
    j_mean: float
    j_recall: float
    j_decay: float
    f_mean: float
    f_recall: float
    f_decay: float
    j_curve: list[float | None] = field(default_factory=list)   # CURVE_BUCKETS entries
    curve_counts: list[int] = field(default_factory=list)


def _summarize(objects: list[ObjectResult],
               curve_acc: list[list[float]]) -> MetricReport:
    def avg(attr):
        return float(np.mean([getattr(o, attr) for o in objects]))

    curve = [float(np.mean(vals)) if vals else None for vals in curve_acc]
    counts = [len(vals) for vals in curve_acc]
    return MetricReport(objects, avg("j_mean"), avg("j_recall"), avg("j_decay"),
                        avg("f_mean"), avg("f_recall"), avg("f_decay"),
                        curve, counts)


def predict_video(ck, video, obj: str, mask_writer=None):
    """Unroll a trained model over one object of one video.

    Returns (eval_indices, probability maps at native resolution for those
    indices). Frame 0 is initialization only and never evaluated. When
    mask_writer is given it receives (frame_index, prob) for every frame
    from 1 on, not just annotated ones.
    """
    cfg = ck.model_config
    h, w = video.frame_size
    y0_native = video.mask_at(obj, 0)
    if y0_native is None:
        raise ValueError(f"{video.video_id}/{obj}: evaluation needs a frame-0 mask")
    frames = [Tensor(prepare_frame(video.load_frame(i), cfg.input_h, cfg.input_w))
              for i in range(video.n_frames)]
    y0 = Tensor(prepare_mask(y0_native, cfg.input_h, cfg.input_w))
    feedback = "self_prediction" if cfg.encoder_variant == "rgb_plus_prev_mask" else "none"
    preds = model.unroll(frames, y0, ck.params, cfg, feedback=feedback)

    ann = set(video.annotated_indices(obj))
    eval_idx, probs = [], []
    for t in range(1, video.n_frames):
        prob = preds[t - 1].data[0]
        if prob.shape != (h, w):
            prob = resize_bilinear(prob, h, w)
        if mask_writer is not None:
            mask_writer(t, prob)
        if t in ann:
            eval_idx.append(t)
            probs.append(prob)
    return eval_idx, probs


def _evaluate_video(ck, video, online, online_config, tolerance_px, mask_writer):
    from .online import OnlineConfig, online_finetune

    results: list[ObjectResult] = []
    curve_pairs: list[tuple[int, float]] = []
    for obj in video.object_ids:
        run_ck = ck
        if online:
            ocfg = online_config or OnlineConfig()
            cfg = ck.model_config
            x0 = video.load_frame(0)
            y0 = video.mask_at(obj, 0)
            if x0.shape[:2] != (cfg.input_h, cfg.input_w):
                x0 = np.clip(np.rint(resize_bilinear(x0, cfg.input_h, cfg.input_w)),
                             0, 255).astype(np.uint8)
                y0 = resize_nearest(y0, cfg.input_h, cfg.input_w)
            run_ck, _ = online_finetune(ck, x0, y0, ocfg)
        writer = None
        if mask_writer is not None:
            writer = lambda t, prob, v=video, o=obj: mask_writer(v, o, t, prob)
        eval_idx, probs = predict_video(run_ck, video, obj, mask_writer=writer)
        if not eval_idx:
            continue
        js, fs = [], []
        denom = max(video.n_frames - 1, 1)
        for t, prob in zip(eval_idx, probs):
            gt = video.mask_at(obj, t)
            pred = prob > BINARIZE_THRESHOLD
            j = region_similarity(pred, gt)
            js.append(j)
            fs.append(contour_accuracy(pred, gt, tolerance_px))
            curve_pairs.append((min(int(t / denom * CURVE_BUCKETS), CURVE_BUCKETS - 1), j))
        results.append(ObjectResult(video.video_id, obj, eval_idx, js, fs))
    return results, curve_pairs


def evaluate(ck, dataset, online: bool = False, online_config=None,
             tolerance_px: int | None = None, mask_writer=None,
             threads: int = 1) -> MetricReport:
    """Score a checkpoint over a dataset: per object, optionally fine-tune
    online first, unroll, threshold at 0.5, and measure J and F at annotated
    frames (frame 0 excluded). J values are also pooled into 20 equal
    normalized-position buckets across objects.

    threads > 1 evaluates videos in a worker pool; results are merged in
    dataset order, so the report is identical to a sequential run.
    """
    if threads > 1 and len(dataset) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_video = list(pool.map(
                lambda v: _evaluate_video(ck, v, online, online_config,
                                          tolerance_px, mask_writer), dataset))
    else:
        per_video = [_evaluate_video(ck, v, online, online_config,
                                     tolerance_px, mask_writer) for v in dataset]

    objects: list[ObjectResult] = []
    curve_acc: list[list[float]] = [[] for _ in range(CURVE_BUCKETS)]
    for results, curve_pairs in per_video:
        objects.extend(results)
        for bucket, j in curve_pairs:
            curve_acc[bucket].append(j)
    if not objects:
        raise ValueError("evaluate: no annotated frames past frame 0")
    return _summarize(objects, curve_acc)


def resolve_overlaps(prob_maps: dict[str, np.ndarray],
                     threshold: float = BINARIZE_THRESHOLD) -> dict[str, np.ndarray]:
    """Turn per-object probability maps into disjoint binary masks: a pixel
    claimed by several objects goes to the highest probability."""
    if not prob_maps:
        return {}
    keys = list(prob_maps)
    stack = np.stack([prob_maps[k] for k in keys])
    winner = stack.argmax(axis=0)
    any_on = stack.max(axis=0) > threshold
    return {k: ((winner == i) & any_on).astype(np.uint8) for i, k in enumerate(keys)}


# ---------------------------------------------------------------------------
# Report writers


def report_to_dict(report: MetricReport) -> dict:
    return {
        "aggregates": {
            "j_mean": report.j_mean, "j_recall": report.j_recall,
            "j_decay": report.j_decay, "f_mean": report.f_mean,
            "f_recall": report.f_recall, "f_decay": report.f_decay,
        },
        "j_curve": report.j_curve,
        "curve_counts": report.curve_counts,
        "objects": [{
            "video": o.video_id, "object": o.object_id,
            "frame_indices": o.frame_indices, "j": o.j, "f": o.f,
            "j_mean": o.j_mean, "j_recall": o.j_recall, "j_decay": o.j_decay,
            "f_mean": o.f_mean, "f_recall": o.f_recall, "f_decay": o.f_decay,
        } for o in report.objects],
    }


def write_report_json(report: MetricReport, path) -> None:
    Path(path).write_text(json.dumps(report_to_dict(report), indent=1))


def write_per_frame_csv(report: MetricReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video", "object", "frame_index", "j", "f"])
        for o in report.objects:
            for t, j, f in zip(o.frame_indices, o.j, o.f):
                w.writerow([o.video_id, o.object_id, t, f"{j:.6f}", f"{f:.6f}"])


def write_curve_csv(report: MetricReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bucket", "j_mean"])
        for b, v in enumerate(report.j_curve):
            w.writerow([b, "" if v is None else f"{v:.6f}"])
