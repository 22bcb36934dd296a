"""Compare the architecture variants on the synthetic benchmark.

Trains three desk models on the same data: the base model, the previous-mask
encoder (teacher forcing then self-prediction curriculum), and the
mask-downsample initializer, then scores all three on the held-out set.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from svos import metrics, model, training
from generalization_benchmark import benchmark_datasets


def train_variant(train_set, steps, lr, seed, **variants):
    cfg = training.TrainConfig(model=model.make_config("desk", **variants),
                               lr=lr, max_steps=steps, t_min=5, t_max=8, seed=seed,
                               plateau_window=50, plateau_lookback=100,
                               curriculum_window=50, curriculum_lookback=100)
    t0 = time.perf_counter()
    ck = training.train(cfg, dataset=train_set)
    return ck, time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()

    train_set, test_set = benchmark_datasets()
    rows = []
    for label, variants in (
            ("base", {}),
            ("prev-mask encoder", {"encoder_variant": "rgb_plus_prev_mask"}),
            ("mask-reshape initializer", {"init_variant": "mask_reshape"})):
        ck, took = train_variant(train_set, args.steps, args.lr, args.seed, **variants)
        report = metrics.evaluate(ck, test_set)
        rows.append((label, report.j_mean, report.f_mean, took,
                     ck.stage2_step, ck.curriculum_step))
        print(f"{label:26s} J_mean={report.j_mean:.4f} F_mean={report.f_mean:.4f} "
              f"({took:.0f}s, stage2@{ck.stage2_step}, curriculum@{ck.curriculum_step})")

    base_j = rows[0][1]
    print(f"\nprev-mask encoder vs base: {rows[1][1] - base_j:+.4f} J")
    print(f"mask-reshape vs base:      {rows[2][1] - base_j:+.4f} J")


if __name__ == "__main__":
    main()
