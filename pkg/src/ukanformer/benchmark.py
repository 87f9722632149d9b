"""Desk-scale noisy-label benchmark.

Scenes are synthesized with exact and degraded masks, tiled, and split by
scene. A model is trained on the degraded labels only and scored against
the exact masks on held-out scenes; the degraded labels themselves are
scored the same way for comparison.
"""
from dataclasses import dataclass, field

import numpy as np

from .data import TileEntry, split_dataset, tile_scene, to_model_input
from .model import ModelConfig, build
from .synth import SynthSpec, synth_generate
from .train_eval import TrainConfig, evaluate, predict, train

BENCH_SPEC = dict(n_scenes=20, scene_size=64, blobs_min=4, blobs_max=7, radius_min=7.0,
                  radius_max=14.0, dilate_px=2.0, erode_px=2.0, boundary_jitter_px=2.0,
                  patch_flip_prob=0.015, flip_patch_px=4, image_noise=0.04)
BENCH_TRAIN = dict(batch_size=8, epochs=20, lr0=0.05, factor=0.5, patience=5, augment=True)


@dataclass
class TileSet:
    images: np.ndarray
    clean: np.ndarray
    noisy: np.ndarray
    entries: list = field(default_factory=list)


def tile_synth(scenes, tile_size, overlap=0.2):
    """Tile every synthetic scene; returns (entries, images, clean masks, noisy masks)."""
    entries, images, clean, noisy = [], [], [], []
    for sc in scenes:
        stacked = np.concatenate([sc.image, sc.clean[..., None], sc.noisy[..., None]], axis=2)
        for tile, _, x0, y0 in tile_scene(stacked, sc.clean, tile_size, overlap):
            tid = f"{sc.scene_id}_y{y0:04d}_x{x0:04d}"
            entries.append(TileEntry(sc.scene_id, tid, x0, y0, tile_size))
            images.append(to_model_input(tile[..., :3]))
            clean.append(tile[..., 3])
            noisy.append(tile[..., 4])
    return entries, np.stack(images), np.stack(clean), np.stack(noisy)


def make_benchmark(seed, tile_size=32, test_fraction=0.2, **spec_overrides):
    spec = SynthSpec(**{**BENCH_SPEC, **spec_overrides, "seed": seed})
    scenes = synth_generate(spec)
    entries, images, clean, noisy = tile_synth(scenes, tile_size)
    manifest = split_dataset(entries, test_fraction, seed=seed, by_scene=True)
    is_test = np.array([e.split == "test" for e in manifest.entries])
    train_set = TileSet(images[~is_test], clean[~is_test], noisy[~is_test], manifest.split("train"))
    test_set = TileSet(images[is_test], clean[is_test], noisy[is_test], manifest.split("test"))
    return train_set, test_set, manifest


@dataclass
class BenchResult:
    seed: int
    decoder: str
    pred_vs_clean: float
    noisy_vs_clean: float
    pred_accuracy: float
    noisy_accuracy: float
    final_loss: float

    @property
    def beats_labels(self):
        return self.pred_vs_clean > self.noisy_vs_clean


def run_noise_benchmark(seed, decoder="gl_trans", model_overrides=None, train_overrides=None,
                        bench=None):
    """Train on noisy labels for one seed; mean per-tile IoU values are fractions in [0, 1]."""
    train_set, test_set, manifest = bench or make_benchmark(seed)
    mcfg = ModelConfig(**{"decoder": decoder, "seed": seed, "input_size": train_set.images.shape[2:],
                          **(model_overrides or {})})
    tcfg = TrainConfig(**{**BENCH_TRAIN, "seed": seed, **(train_overrides or {})})
    model = build(mcfg)
    history = train(model, train_set.images, train_set.noisy, tcfg)
    preds = predict(model, test_set.images)
    tag = manifest.identity_hash()
    rep_pred = evaluate(preds, test_set.clean, tag)
    rep_noisy = evaluate(test_set.noisy, test_set.clean, tag)
    return BenchResult(seed, decoder, rep_pred.mean_iou / 100, rep_noisy.mean_iou / 100,
                       rep_pred.accuracy / 100, rep_noisy.accuracy / 100,
                       history[-1][1] if history else float("nan"))
