"""Acceptance gate: nine numbered criteria, one per test, each printing a
pass line with its measured values. The heavy fixtures (real desk-scale
training runs) are session-scoped and shared across criteria.

Run with `pytest tests/test_acceptance.py -v -s`.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from oracles import oracle_f, oracle_iou, random_pair
from svos import gradcheck, metrics, model, training
from svos.data import SynthConfig, synth_dataset, synth_generate
from svos.metrics import aggregate, contour_accuracy, region_similarity
from svos.online import OnlineConfig, online_finetune
from svos.tensor import GradTape, Tensor, backward
from svos.training import TrainConfig, params_digest

SIGMOID_1 = 0.7310585786300049


def _ok(msg):
    print(f"\n[PASS] {msg}")


# ---------------------------------------------------------------------------
# Shared experiment fixtures


@pytest.fixture(scope="session")
def overfit_sequence():
    return synth_generate(SynthConfig(height=64, width=112, num_frames=8,
                                      num_objects=1, velocity_min=1.0,
                                      velocity_max=3.0, seed=42))


def _overfit_config():
    return TrainConfig(model=model.make_config("desk"), lr=1e-4, max_steps=2000,
                       t_min=8, t_max=8, seed=5)


@pytest.fixture(scope="session")
def overfit_run(overfit_sequence, tmp_path_factory):
    out = tmp_path_factory.mktemp("overfit_a")
    losses = []
    t0 = time.perf_counter()
    ck = training.train(_overfit_config(), dataset=[overfit_sequence], out_dir=out,
                        log=lambda s, st, l: losses.append(l))
    elapsed = time.perf_counter() - t0
    return {"checkpoint": ck, "losses": losses, "elapsed": elapsed,
            "final_path": out / "model_final.svos"}


@pytest.fixture(scope="session")
def benchmark():
    train_cfg = SynthConfig(height=64, width=112, num_frames=10, num_objects=1,
                            velocity_min=1.0, velocity_max=3.0, drift_rate=2.0,
                            jitter=1.0, seed=1000)
    test_cfg = replace(train_cfg, drift_rate=4.0, seed=5000)
    return synth_dataset(train_cfg, 200), synth_dataset(test_cfg, 20)


def _benchmark_train(train_set, **variants):
    cfg = TrainConfig(model=model.make_config("desk", **variants), lr=1e-4,
                      max_steps=3000, t_min=5, t_max=8, seed=11,
                      plateau_window=50, plateau_lookback=100,
                      curriculum_window=50, curriculum_lookback=100)
    return training.train(cfg, dataset=train_set)


@pytest.fixture(scope="session")
def base_run(benchmark):
    train_set, test_set = benchmark
    ck = _benchmark_train(train_set)
    report = metrics.evaluate(ck, test_set)
    return {"checkpoint": ck, "report": report}


# ---------------------------------------------------------------------------
# Criteria


def test_criterion_1_gradient_correctness():
    report = gradcheck.run_full_suite(seed=0)
    worst = report.worst
    for r in report.results:
        assert r.ok, f"{r.name}: {r.max_rel_err:.3e} >= {r.tol:g}"
    assert report.elapsed < 60.0
    _ok(f"criterion 1: gradcheck, {len(report.results)} checks, worst "
        f"{worst.name} at {worst.max_rel_err:.2e} (tol {worst.tol:g}), "
        f"{report.elapsed:.1f}s < 60s")


def test_criterion_2_convlstm_oracle():
    cfg = model.make_config("desk-micro")
    fresh = model.build_params(cfg, seed=0)
    forget = fresh.convlstm["conv_f.b"].data
    assert (forget == 1.0).all()

    params = model.build_params(cfg, seed=0)
    for name, t in params.convlstm.items():
        t.data[:] = 1.0 if name == "conv_f.b" else 0.0
    shape = (cfg.lstm_channels, cfg.feature_h, cfg.feature_w)
    prev = model.LstmState(Tensor(np.ones(shape, dtype=np.float32)),
                           Tensor(np.zeros(shape, dtype=np.float32)))
    state = model.convlstm_step(Tensor(np.zeros(shape, dtype=np.float32)), prev, params)
    c = float(state.c.data[0, 0, 0])
    h = float(state.h.data[0, 0, 0])
    assert round(c, 6) == round(SIGMOID_1, 6) == 0.731059
    assert round(h, 6) == round(0.5 * SIGMOID_1, 6) == 0.365529
    np.testing.assert_allclose(state.c.data, SIGMOID_1, atol=5e-7)
    np.testing.assert_allclose(state.h.data, 0.5 * SIGMOID_1, atol=5e-7)
    _ok(f"criterion 2: convlstm oracle c={c:.6f} h={h:.6f}; forget bias exactly 1 at init")


def test_criterion_3_metric_oracles():
    rng = np.random.default_rng(2024)
    worst_f = 0.0
    for _ in range(1000):
        pred, gt = random_pair(rng, shape=(16, 16))
        assert region_similarity(pred, gt) == oracle_iou(pred, gt)
        tol = metrics.default_tolerance(pred.shape)
        diff = abs(contour_accuracy(pred, gt) - oracle_f(pred, gt, tol))
        worst_f = max(worst_f, diff)
        assert diff <= 1e-12
    decay = aggregate([1.0, 0.9, 0.8, 0.7])[2]
    assert decay == 1.0 - 0.7
    _ok(f"criterion 3: J exact and F within {worst_f:.1e} of the all-pairs "
        f"oracle on 1000 random 16x16 pairs; decay([1,.9,.8,.7]) == 0.3")


def test_criterion_4_overfit(overfit_run, overfit_sequence):
    ck = overfit_run["checkpoint"]
    elapsed = overfit_run["elapsed"]
    assert elapsed < 600.0, f"training took {elapsed:.0f}s"

    cfg = _overfit_config()
    clip = training.sample_training_clip([overfit_sequence],
                                         np.random.default_rng(0), cfg,
                                         "annotated_only")
    with GradTape():
        loss, _ = training.clip_loss(ck.params, cfg.model, clip, "none")
    bce = loss.item()
    assert bce < 0.05

    report = metrics.evaluate(ck, [overfit_sequence])
    per_frame_j = report.objects[0].j
    assert report.objects[0].frame_indices == list(range(1, 8))
    assert all(j > 0.9 for j in per_frame_j)
    _ok(f"criterion 4: overfit 2000 steps in {elapsed:.0f}s < 600s, "
        f"BCE {bce:.5f} < 0.05, min per-frame J {min(per_frame_j):.4f} > 0.9")


def test_criterion_5_generalization(base_run):
    report = base_run["report"]
    assert report.j_mean >= 0.70, f"J_mean {report.j_mean:.4f}"
    assert report.f_mean >= 0.60, f"F_mean {report.f_mean:.4f}"
    assert len(report.j_curve) == 20
    assert sum(report.curve_counts) == sum(len(o.j) for o in report.objects)
    _ok(f"criterion 5: held-out J_mean {report.j_mean:.4f} >= 0.70, "
        f"F_mean {report.f_mean:.4f} >= 0.60, 20-bucket curve emitted")


def test_criterion_6_online_learning(base_run, benchmark):
    _, test_set = benchmark
    ck = base_run["checkpoint"]
    ocfg = OnlineConfig(iterations=200, lr=1e-5, seed=77)

    seq = test_set[0]
    before = params_digest(ck.params, ["convlstm"])
    tuned, report = online_finetune(ck, seq.frames[0], seq.annotations["0"][0], ocfg)
    assert params_digest(tuned.params, ["convlstm"]) == before          # (a)
    ratio = report.final_loss / max(report.initial_loss, 1e-12)
    assert report.final_loss <= 0.5 * report.initial_loss               # (b)

    offline_j = base_run["report"].j_mean
    online_report = metrics.evaluate(ck, test_set, online=True, online_config=ocfg)
    assert online_report.j_mean >= offline_j                            # (c)
    _ok(f"criterion 6: convlstm digest unchanged; pair loss "
        f"{report.initial_loss:.4f} -> {report.final_loss:.4f} "
        f"(ratio {ratio:.2f} <= 0.5); online J {online_report.j_mean:.4f} "
        f">= offline J {offline_j:.4f}")


def test_criterion_7_variant_parity(base_run, benchmark):
    train_set, test_set = benchmark
    base_j = base_run["report"].j_mean

    enc_ck = _benchmark_train(train_set, encoder_variant="rgb_plus_prev_mask")
    assert enc_ck.curriculum_step is not None, "curriculum switch never fired"
    enc_j = metrics.evaluate(enc_ck, test_set).j_mean
    assert abs(enc_j - base_j) <= 0.05

    reshape_ck = _benchmark_train(train_set, init_variant="mask_reshape")
    reshape_j = metrics.evaluate(reshape_ck, test_set).j_mean
    assert reshape_j < base_j
    _ok(f"criterion 7: prev-mask encoder J {enc_j:.4f} within 0.05 of base "
        f"{base_j:.4f} (teacher forcing -> curriculum at step "
        f"{enc_ck.curriculum_step}); mask-reshape J {reshape_j:.4f} < base")


def test_criterion_8_loss_masking():
    video = synth_generate(SynthConfig(height=64, width=112, num_frames=16,
                                       num_objects=1, annotation_stride=5, seed=8))
    cfg = TrainConfig(model=model.make_config("desk"), t_min=6, t_max=6, seed=0)
    params = model.build_params(cfg.model, seed=1)
    clip = training.sample_training_clip([video], np.random.default_rng(3), cfg,
                                         "all_frames")
    assert not all(clip.valid)

    def run(c):
        with GradTape():
            loss, _ = training.clip_loss(params, cfg.model, c, "none")
            backward(loss)
        grads = {k: t.grad.copy() for k, t in params.named().items()}
        for t in params.named().values():
            t.grad = None
        return loss.data.tobytes(), grads

    base_bytes, base_grads = run(clip)
    garbage = np.random.default_rng(99)
    mutated_masks = [(garbage.random((1, 64, 112)).astype(np.float32) if not v else m)
                     for m, v in zip(clip.masks, clip.valid)]
    import dataclasses
    mutated = dataclasses.replace(clip, masks=mutated_masks)
    mut_bytes, mut_grads = run(mutated)
    assert mut_bytes == base_bytes
    for k in base_grads:
        assert base_grads[k].tobytes() == mut_grads[k].tobytes()
    _ok(f"criterion 8: mutating {sum(not v for v in clip.valid)} valid=false "
        f"targets changed no loss or gradient bit")


def test_criterion_9_reproducibility(overfit_run, overfit_sequence, tmp_path_factory):
    out_b = tmp_path_factory.mktemp("overfit_b")
    training.train(_overfit_config(), dataset=[overfit_sequence], out_dir=out_b)
    bytes_a = overfit_run["final_path"].read_bytes()
    bytes_b = (out_b / "model_final.svos").read_bytes()
    assert bytes_a == bytes_b
    _ok(f"criterion 9: two seeded runs produced byte-identical final "
        f"checkpoints ({len(bytes_a)} bytes)")
