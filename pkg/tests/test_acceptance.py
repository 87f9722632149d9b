"""Acceptance criteria, one test per criterion.

Each test prints (and records for the terminal summary) a single
``[PASS]``/``[FAIL]`` line with the measured values. Criteria 6 and 7 share
one set of ten training runs (about ten minutes on one core).
"""
import time

import numpy as np
import pytest

from ukanformer import checkpoint
from ukanformer import functional as F
from ukanformer.benchmark import make_benchmark, run_noise_benchmark
from ukanformer.data import tile_origins, tile_scene, tile_stride
from ukanformer.gl_trans import GLTransBlock
from ukanformer.gradcheck import run_suite
from ukanformer.kan import BSplineGrid, bspline_basis
from ukanformer.model import ModelConfig, build
from ukanformer.tensor import Tensor, precision
from ukanformer.train_eval import (MetricsReport, TrainConfig, compare_reports, coral_iou, evaluate,
                                   pixel_accuracy, predict, train)

RESULTS = []
SEEDS = range(5)


def report(num, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {title} -- {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_1_gradient_suite():
    t0 = time.perf_counter()
    results = run_suite(seed=0)
    elapsed = time.perf_counter() - t0
    failed = [r.name for r in results if not r.passed]
    worst = max(results, key=lambda r: r.max_rel_err / r.tol)
    report(1, "finite-difference gradient suite", not failed and elapsed < 120,
           f"{len(results)} checks, failed={failed}, worst {worst.name} {worst.max_rel_err:.2e} "
           f"(tol {worst.tol:.0e}), {elapsed:.1f}s")


def test_2_analytic_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    with precision("f64"):
        sm_err = 0.0
        for n in (1, 3, 16, 64):
            rows = F.softmax_rows(Tensor(rng.uniform(-1e3, 1e3, (n, n)))).data
            sm_err = max(sm_err, float(np.abs(rows.sum(axis=1) - 1).max()))

        basis = bspline_basis(np.linspace(-1, 1, 10001), BSplineGrid())
        pu_err = float(np.abs(basis.sum(axis=1) - 1).max())

        block = GLTransBlock(3, 4, 4, np.random.default_rng(1))
        block.w_q.data[:] = 0.0
        block.w_k.data[:] = 0.0
        a, _ = block.attention(Tensor(rng.standard_normal((2, 3, 4, 4))))
        uniform_exact = bool(np.all(a.data == 1.0 / 16))

        x = rng.standard_normal((2, 4, 6, 5))
        w = rng.standard_normal((4, 1, 3, 3))
        dw = F.depthwise_conv2d(Tensor(x), Tensor(w)).data
        per_channel = np.concatenate([F.conv2d(Tensor(x[:, c:c + 1]), Tensor(w[c:c + 1])).data
                                      for c in range(4)], axis=1)
        dw_err = float(np.abs(dw - per_channel).max())
    elapsed = time.perf_counter() - t0
    ok = sm_err <= 1e-6 and pu_err <= 1e-6 and uniform_exact and dw_err <= 1e-12 and elapsed < 30
    report(2, "analytic invariants", ok,
           f"softmax {sm_err:.1e}, partition of unity {pu_err:.1e}, uniform attention exact "
           f"{uniform_exact}, depthwise vs per-channel {dw_err:.1e}, {elapsed:.2f}s")


def _loop_counts(p, r):
    tp = fp = fn = tn = 0
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            a, b = int(p[i, j]), int(r[i, j])
            if a and b:
                tp += 1
            elif a:
                fp += 1
            elif b:
                fn += 1
            else:
                tn += 1
    return tp, fp, fn, tn


def test_3_metric_oracle():
    rng = np.random.default_rng(0)
    mismatches = 0
    for _ in range(1000):
        p = (rng.random((8, 8)) < rng.random()).astype(np.uint8)
        r = (rng.random((8, 8)) < rng.random()).astype(np.uint8)
        tp, fp, fn, tn = _loop_counts(p, r)
        iou = None if tp + fp + fn == 0 else tp / (tp + fp + fn)
        acc = 100.0 * (tp + tn) / 64
        if coral_iou(p, r) != iou or pixel_accuracy([(p, r)]) != acc:
            mismatches += 1
    labels = compare_reports(MetricsReport(mean_iou=67.00, accuracy=83.98, test_set="t"),
                             MetricsReport(mean_iou=47.67, accuracy=66.49, test_set="t"))
    ablation = compare_reports(MetricsReport(mean_iou=67.00, accuracy=83.98, test_set="t"),
                               MetricsReport(mean_iou=64.58, accuracy=81.88, test_set="t"))
    arith = (round(labels["delta_iou"], 2) == 19.33 and round(labels["delta_accuracy"], 2) == 17.49
             and labels["iou_drop_exceeds_accuracy"]
             and round(ablation["delta_iou"], 2) == 2.42 and round(ablation["delta_accuracy"], 2) == 2.10)
    report(3, "metric oracle and reported deltas", mismatches == 0 and arith,
           f"{mismatches} mismatches over 1000 pairs; label-standard deltas "
           f"{labels['delta_iou']:.2f}/{labels['delta_accuracy']:.2f}, decoder deltas "
           f"{ablation['delta_iou']:.2f}/{ablation['delta_accuracy']:.2f}")


def test_4_tiling():
    stride = tile_stride(256, 0.2)
    o460, o500 = tile_origins(460, 256, stride), tile_origins(500, 256, stride)
    n460 = len(tile_scene(np.zeros((460, 460, 3), np.uint8), np.zeros((460, 460)), 256, 0.2))
    n500 = len(tile_scene(np.zeros((500, 500, 3), np.uint8), np.zeros((500, 500)), 256, 0.2))
    rng = np.random.default_rng(0)
    uncovered = 0
    for _ in range(100):
        h, w = (int(v) for v in rng.integers(1, 400, 2))
        tile = int(rng.integers(8, 128))
        cover = np.zeros((max(h, tile), max(w, tile)), bool)
        for _, _, x0, y0 in tile_scene(np.zeros((h, w, 3), np.uint8), np.zeros((h, w)), tile, 0.2):
            cover[y0:y0 + tile, x0:x0 + tile] = True
        uncovered += int(not cover.all())
    ok = (stride == 204 and o460 == [0, 204] and o500 == [0, 204, 244] and n460 == 4 and n500 == 9
          and uncovered == 0)
    report(4, "tiling examples and coverage", ok,
           f"stride {stride}, 460px origins {o460} -> {n460} tiles, 500px origins {o500} -> {n500} tiles, "
           f"{uncovered}/100 random scenes with gaps")


@pytest.mark.slow
def test_5_overfit():
    train_set, _, _ = make_benchmark(0)
    images, masks = train_set.images[:8], train_set.clean[:8]
    model = build(ModelConfig(encoder_channels=(16, 32, 64), input_size=(32, 32), seed=0))
    best = {"iou": 0.0, "epoch": 0}

    def monitor(epoch, m):
        if epoch % 10:
            return False
        iou = evaluate(predict(m, images), masks).mean_iou
        best.update(iou=iou, epoch=epoch)
        return iou >= 95.0

    t0 = time.perf_counter()
    train(model, images, masks, TrainConfig(epochs=500, lr0=0.1, patience=20, augment=False, seed=0),
          on_epoch=monitor)
    elapsed = time.perf_counter() - t0
    report(5, "overfit 8 tiles", best["iou"] >= 95.0 and elapsed < 600,
           f"train coral IoU {best['iou']:.2f}% at epoch {best['epoch']} (limit 500), {elapsed:.0f}s")


@pytest.fixture(scope="module")
def benchmark_runs():
    t0 = time.perf_counter()
    runs = {}
    for seed in SEEDS:
        bench = make_benchmark(seed)
        for decoder in ("gl_trans", "plain_conv"):
            runs[seed, decoder] = run_noise_benchmark(seed, decoder, bench=bench)
    return runs, time.perf_counter() - t0


@pytest.mark.slow
def test_6_noise_robustness(benchmark_runs):
    runs, elapsed = benchmark_runs
    gl = [runs[s, "gl_trans"] for s in SEEDS]
    noisy = float(np.mean([r.noisy_vs_clean for r in gl]))
    wins = sum(r.beats_labels for r in gl)
    per_seed = ", ".join(f"s{r.seed}: {r.pred_vs_clean:.3f}>{r.noisy_vs_clean:.3f}" for r in gl)
    report(6, "model trained on noisy labels beats them", abs(noisy - 0.70) <= 0.05 and wins >= 4
           and elapsed < 3600,
           f"mean noisy-vs-clean IoU {noisy:.3f}, prediction wins {wins}/5 ({per_seed}), {elapsed:.0f}s")


@pytest.mark.slow
def test_7_ablation_direction(benchmark_runs):
    runs, _ = benchmark_runs
    wins = sum(runs[s, "gl_trans"].pred_vs_clean >= runs[s, "plain_conv"].pred_vs_clean for s in SEEDS)
    per_seed = ", ".join(f"s{s}: {runs[s, 'gl_trans'].pred_vs_clean:.3f} vs "
                         f"{runs[s, 'plain_conv'].pred_vs_clean:.3f}" for s in SEEDS)
    report(7, "gl_trans decoder >= plain_conv decoder", wins >= 4, f"{wins}/5 seeds ({per_seed})")


def test_8_determinism_and_persistence(tmp_path):
    train_set, test_set, manifest = make_benchmark(1, n_scenes=4)
    cfg = ModelConfig(encoder_channels=(8, 16), tokkan_dims=(16, 16), input_size=(32, 32), seed=7)
    tcfg = TrainConfig(epochs=2, lr0=0.05, seed=7)
    blobs = []
    for run in ("a", "b"):
        model = build(cfg)
        train(model, train_set.images, train_set.noisy, tcfg, out_dir=tmp_path / run)
        blobs.append((tmp_path / run / "final.ukf").read_bytes())
    identical = blobs[0] == blobs[1]

    loaded, _ = checkpoint.load(tmp_path / "a" / "final.ukf")
    checkpoint.save(tmp_path / "resaved.ukf", loaded)
    round_trip = (tmp_path / "resaved.ukf").read_bytes() == blobs[0]
    tag = manifest.identity_hash()
    before = evaluate(predict(model, test_set.images), test_set.clean, tag)
    after = evaluate(predict(loaded, test_set.images), test_set.clean, tag)
    same_metrics = (before.mean_iou, before.accuracy) == (after.mean_iou, after.accuracy)
    report(8, "determinism and checkpoint round trip", identical and round_trip and same_metrics,
           f"two runs identical: {identical}; save/load/save identical: {round_trip}; "
           f"eval IoU {before.mean_iou!r} vs {after.mean_iou!r}, acc {before.accuracy!r} vs {after.accuracy!r}")
