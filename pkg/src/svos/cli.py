"""Command-line entry point: train, eval, infer, finetune, synth, gradcheck.

Exit codes: 0 success, 1 configuration or I/O error, 2 training divergence,
3 gradient-check failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, configio, data, gradcheck, metrics, model
from .data import DataError
from .online import OnlineConfig, online_finetune
from .tensor import ShapeError
from .training import (CheckpointError, ConfigError, DivergenceError,
                       load_checkpoint, save_checkpoint, train)

_PALETTE = np.array([[0, 200, 0], [220, 40, 40], [60, 80, 230], [230, 200, 0],
                     [200, 0, 200], [0, 200, 200]], dtype=np.float64)


def _digest_bytes(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def write_run_header(out_dir: Path, command: str, seed, config_digest: str) -> None:
    header = {"command": command, "seed": seed, "config_digest": config_digest,
              "version": __version__}
    (out_dir / "run_header.json").write_text(json.dumps(header, indent=1))


def _thread_count(args) -> int:
    if getattr(args, "threads", None):
        return max(1, args.threads)
    env = os.environ.get("SVOS_THREADS")
    return max(1, int(env)) if env else 1


def cmd_train(args) -> int:
    cfg = configio.train_config_from_file(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_run_header(out_dir, "train", cfg.seed,
                     _digest_bytes(Path(args.config).read_bytes()))
    rows = []
    train(cfg, out_dir=out_dir, log=lambda step, stage, loss: rows.append((step, stage, loss)))
    with open(out_dir / "loss_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "stage", "loss"])
        for step, stage, loss in rows:
            w.writerow([step, stage, f"{loss:.6f}"])
    return 0


def _overlay(frame: np.ndarray, masks: dict[str, np.ndarray]) -> np.ndarray:
    out = frame.astype(np.float64)
    for i, obj in enumerate(sorted(masks)):
        color = _PALETTE[i % len(_PALETTE)]
        on = masks[obj].astype(bool)
        out[on] = 0.5 * out[on] + 0.5 * color
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    dataset = data.load_manifest(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ocfg = (configio.online_config_from_file(args.online_config)
            if args.online_config else OnlineConfig())
    if args.seed is not None:
        ocfg = replace(ocfg, seed=args.seed)
    write_run_header(out_dir, "eval", ocfg.seed if args.online else None,
                     _digest_bytes(Path(args.checkpoint).read_bytes()))

    masks_dir = out_dir / "masks"
    probs: dict[tuple[str, int], dict[str, np.ndarray]] = {}

    def mask_writer(video, obj, t, prob):
        d = masks_dir / f"{video.video_id}__{obj}"
        d.mkdir(parents=True, exist_ok=True)
        data.write_mask(d / f"pred_{t:05d}.pgm",
                        (prob > metrics.BINARIZE_THRESHOLD).astype(np.uint8))
        probs.setdefault((video.video_id, t), {})[obj] = prob

    report = metrics.evaluate(ck, dataset, online=args.online, online_config=ocfg,
                              mask_writer=mask_writer, threads=_thread_count(args))
    metrics.write_report_json(report, out_dir / "report.json")
    metrics.write_per_frame_csv(report, out_dir / "per_frame.csv")
    metrics.write_curve_csv(report, out_dir / "j_over_time.csv")

    by_video = {v.video_id: v for v in dataset}
    for (vid, t), per_obj in sorted(probs.items()):
        omasks = metrics.resolve_overlaps(per_obj)
        odir = out_dir / "overlays" / vid
        odir.mkdir(parents=True, exist_ok=True)
        data.write_ppm(odir / f"frame_{t:05d}.ppm",
                       _overlay(by_video[vid].load_frame(t), omasks))
    print(f"J_mean={report.j_mean:.4f} J_recall={report.j_recall:.4f} "
          f"J_decay={report.j_decay:.4f} F_mean={report.f_mean:.4f} "
          f"F_recall={report.f_recall:.4f} F_decay={report.f_decay:.4f}")
    return 0


def _load_frame_dir(frames_dir: Path) -> list[Path]:
    paths = sorted(frames_dir.glob("*.ppm"))
    if len(paths) < 2:
        raise DataError(f"need at least 2 .ppm frames in {frames_dir}")
    return paths


def cmd_infer(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    paths = _load_frame_dir(Path(args.frames))
    frames = [data.read_ppm(p) for p in paths]
    y0 = data.read_mask(args.mask)
    h, w = frames[0].shape[:2]
    if y0.shape != (h, w):
        raise DataError(f"mask is {y0.shape}, frame 0 is {(h, w)}")
    seq = data.VideoSequence("infer", frames, {"0": {0: y0}}, annotation_stride=1)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_run_header(out_dir, "infer", None, _digest_bytes(Path(args.checkpoint).read_bytes()))
    preds: dict[int, np.ndarray] = {}
    metrics.predict_video(ck, seq, "0",
                          mask_writer=lambda t, prob: preds.__setitem__(t, prob))
    for t, prob in sorted(preds.items()):
        data.write_mask(out_dir / f"pred_{t:05d}.pgm",
                        (prob > metrics.BINARIZE_THRESHOLD).astype(np.uint8))
    return 0


def cmd_finetune(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    cfg = (configio.online_config_from_file(args.config)
           if args.config else OnlineConfig())
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    frame = data.read_ppm(args.frame)
    mask = data.read_mask(args.mask)
    mcfg = ck.model_config
    if frame.shape[:2] != (mcfg.input_h, mcfg.input_w):
        frame = np.clip(np.rint(data.resize_bilinear(frame, mcfg.input_h, mcfg.input_w)),
                        0, 255).astype(np.uint8)
        mask = data.resize_nearest(mask, mcfg.input_h, mcfg.input_w)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_run_header(out_dir, "finetune", cfg.seed,
                     _digest_bytes(Path(args.checkpoint).read_bytes()))
    tuned, report = online_finetune(ck, frame, mask, cfg)
    save_checkpoint(tuned, out_dir / "finetuned.svos")
    with open(out_dir / "online_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss"])
        for i, loss in enumerate(report.losses, 1):
            w.writerow([i, f"{loss:.6f}"])
    print(f"pair loss: {report.initial_loss:.4f} -> {report.final_loss:.4f}")
    return 0


def cmd_synth(args) -> int:
    cfg = (configio.synth_config_from_file(args.config)
           if args.config else data.SynthConfig())
    base_seed = args.seed if args.seed is not None else cfg.seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = (_digest_bytes(Path(args.config).read_bytes()) if args.config
              else _digest_bytes(repr(cfg).encode()))
    write_run_header(out_dir, "synth", base_seed, digest)
    sequences = data.synth_dataset(cfg, args.count, base_seed=base_seed)
    manifest = data.export_sequences(sequences, out_dir)
    print(f"wrote {len(sequences)} sequences to {manifest}")
    return 0


def cmd_gradcheck(args) -> int:
    report = gradcheck.run_full_suite(seed=args.seed)
    for r in report.results:
        flag = "ok " if r.ok else "FAIL"
        print(f"[{flag}] {r.name}: max rel err {r.max_rel_err:.3e} (tol {r.tol:g})")
    worst = report.worst
    print(f"worst: {worst.name} at {worst.max_rel_err:.3e} "
          f"(elapsed {report.elapsed:.1f}s)")
    if not report.ok:
        print(f"gradient check FAILED: {worst.name}", file=sys.stderr)
        return 3
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="svos",
                                description="sequence-to-sequence video object segmentation")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="offline training from a manifest dataset")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint against a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--online", action="store_true")
    e.add_argument("--online-config", default=None)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--threads", type=int, default=None)
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("infer", help="predict masks for a frame directory")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--frames", required=True)
    i.add_argument("--mask", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(fn=cmd_infer)

    f = sub.add_parser("finetune", help="online fine-tuning on one frame and mask")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--frame", required=True)
    f.add_argument("--mask", required=True)
    f.add_argument("--config", default=None)
    f.add_argument("--out", required=True)
    f.add_argument("--seed", type=int, default=None)
    f.set_defaults(fn=cmd_finetune)

    s = sub.add_parser("synth", help="generate synthetic sequences + manifest")
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(fn=cmd_synth)

    g = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    g.add_argument("--preset", choices=["desk-micro"], default="desk-micro")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, CheckpointError, DataError, ShapeError, ValueError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
