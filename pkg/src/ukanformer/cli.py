"""``ukf`` command-line interface.

Exit codes: 0 success, 1 numerical/assertion failure, 2 usage or config error.
"""
import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import RunConfig
from .data import (TileEntry, TileManifest, load_image, load_mask, load_split, save_image,
                   save_mask, split_dataset, tile_scene)
from .errors import ConfigError, UKFError
from .model import build
from .synth import synth_generate
from .tensor import no_grad
from .train_eval import compare_reports, evaluate, predict, train, write_report

log = logging.getLogger("ukf")

REFERENCES = ("clean", "noisy")


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


# -- helpers -----------------------------------------------------------------------

def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_run_config(args):
    cfg = RunConfig.load(getattr(args, "config", None))
    raw = cfg.to_dict()
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in raw or not isinstance(raw[section], dict):
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        if name not in raw[section]:
            raise ConfigError(f"unknown config key {key!r}")
        raw[section][name] = _parse_value(value)
    cfg = RunConfig.from_dict(raw)
    if getattr(args, "seed", None) is not None:
        cfg.apply_seed(args.seed)
    if getattr(args, "decoder", None):
        cfg.model.decoder = args.decoder
        cfg.model.validate()
    if getattr(args, "epochs", None) is not None:
        cfg.train.epochs = args.epochs
    if getattr(args, "lr", None) is not None:
        cfg.train.lr0 = args.lr
    return cfg


def _require(path, what):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def reference_dir(mask_path, reference):
    """``tiles/masks/noisy/x.png`` -> ``tiles/masks/<reference>``."""
    return Path(mask_path).parent.parent / reference


def write_tiles(out, scene_id, image, masks, tile_size, overlap):
    """Tile one scene with any number of named masks; returns manifest entries."""
    entries = []
    names = list(masks)
    stacked = np.concatenate([image] + [masks[n][..., None] for n in names], axis=2)
    (out / "tiles" / "images").mkdir(parents=True, exist_ok=True)
    for n in names:
        (out / "tiles" / "masks" / n).mkdir(parents=True, exist_ok=True)
    for tile, _, x0, y0 in tile_scene(stacked, masks[names[0]], tile_size, overlap):
        tid = f"{scene_id}_y{y0:04d}_x{x0:04d}"
        img_rel = f"tiles/images/{tid}.png"
        save_image(out / img_rel, tile[..., :3])
        for k, n in enumerate(names):
            save_mask(out / "tiles" / "masks" / n / f"{tid}.png", tile[..., 3 + k])
        entries.append(TileEntry(scene_id, tid, x0, y0, tile_size, "train", img_rel,
                                 f"tiles/masks/{names[0]}/{tid}.png"))
    return entries


def finish_manifest(out, entries, cfg):
    manifest = split_dataset(entries, cfg.data.test_fraction, seed=cfg.seed,
                             by_scene=cfg.data.split_by_scene, overlap_fraction=cfg.data.overlap)
    manifest.check()
    manifest.write_csv(out / "manifest.csv")
    return manifest


# -- commands ----------------------------------------------------------------------

def cmd_synth(args):
    cfg = load_run_config(args)
    out = Path(args.out)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    scenes = synth_generate(cfg.synth)
    entries = []
    with open(out / "noise_report.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["scene_id", "noisy_vs_clean_iou"])
        for sc in scenes:
            save_image(out / "scenes" / f"{sc.scene_id}.png", sc.image)
            save_mask(out / "scenes" / f"{sc.scene_id}_clean.png", sc.clean)
            save_mask(out / "scenes" / f"{sc.scene_id}_noisy.png", sc.noisy)
            wr.writerow([sc.scene_id, repr(sc.iou)])
            entries += write_tiles(out, sc.scene_id, sc.image, {"noisy": sc.noisy, "clean": sc.clean},
                                   cfg.data.tile_size, cfg.data.overlap)
    finish_manifest(out, entries, cfg)
    cfg.echo(out)
    mean_iou = float(np.mean([sc.iou for sc in scenes]))
    print(f"synth: {len(scenes)} scenes, {len(entries)} tiles, mean noisy-vs-clean IoU {mean_iou:.4f}")
    band = cfg.synth.iou_band
    if band and not band[0] <= mean_iou <= band[1]:
        raise NumericalFailure(f"mean noisy-vs-clean IoU {mean_iou:.4f} outside target band {list(band)}")
    return 0


def cmd_tile(args):
    """Tile user scenes listed in a CSV: scene_id,image_path,mask_path[,clean_mask_path]."""
    cfg = load_run_config(args)
    scenes_csv = _require(args.scenes, "scene list")
    out = Path(args.out)
    entries = []
    with open(scenes_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"scene_id", "image_path", "mask_path"} <= set(rows[0]):
        raise UsageError("scene list needs columns scene_id,image_path,mask_path[,clean_mask_path]")
    base = scenes_csv.parent
    for row in rows:
        image = load_image(_require(base / row["image_path"], "scene image"))
        masks = {"noisy": load_mask(_require(base / row["mask_path"], "scene mask"))}
        if row.get("clean_mask_path"):
            masks["clean"] = load_mask(_require(base / row["clean_mask_path"], "clean mask"))
        entries += write_tiles(out, row["scene_id"], image, masks, cfg.data.tile_size, cfg.data.overlap)
    finish_manifest(out, entries, cfg)
    cfg.echo(out, [scenes_csv])
    print(f"tile: {len(rows)} scenes -> {len(entries)} tiles")
    return 0


def _load_manifest(path):
    path = _require(path, "manifest")
    return TileManifest.read_csv(path), path.parent


def cmd_train(args):
    cfg = load_run_config(args)
    manifest, root = _load_manifest(args.manifest)
    images, masks, _ = load_split(manifest, root, "train")
    if len(images) == 0:
        raise UsageError("manifest has no train tiles")
    cfg.model.input_size = tuple(images.shape[2:])
    cfg.model.validate()
    out = Path(args.out)
    cfg.echo(out, [args.manifest])
    model = build(cfg.model)
    history = train(model, images, masks, cfg.train, out_dir=out)
    print(f"train: {cfg.model.decoder}, {model.num_parameters()} parameters, "
          f"{len(history)} epochs, final loss {history[-1][1] if history else float('nan'):.5f}")
    return 0


def _predictions_for(args, manifest, root, split):
    entries = manifest.split(split)
    if args.predictions:
        pdir = _require(args.predictions, "prediction directory")
        return [load_mask(_require(pdir / f"{e.tile_id}.png", "prediction")) for e in entries]
    if not args.checkpoint:
        raise UsageError("need --checkpoint or --predictions")
    model, _ = checkpoint.load(_require(args.checkpoint, "checkpoint"))
    images, _, _ = load_split(manifest, root, split)
    return list(predict(model, images))


def cmd_eval(args):
    manifest, root = _load_manifest(args.manifest)
    entries = manifest.split(args.split)
    if not entries:
        raise UsageError(f"manifest has no {args.split} tiles")
    refs = []
    for e in entries:
        p = root / reference_dir(e.mask_path, args.reference) / f"{e.tile_id}.png"
        refs.append(load_mask(_require(p, f"{args.reference} reference mask")))
    preds = _predictions_for(args, manifest, root, args.split)
    report = evaluate(preds, refs, manifest.identity_hash(args.split))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "metrics", report, {"reference": args.reference, "split": args.split})
    print(f"eval ({args.reference}): coral IoU {report.mean_iou:.2f}%  accuracy {report.accuracy:.2f}%  "
          f"images {report.n_images}  excluded {report.n_excluded}")
    return 0


def cmd_predict(args):
    manifest, root = _load_manifest(args.manifest)
    model, _ = checkpoint.load(_require(args.checkpoint, "checkpoint"))
    images, _, entries = load_split(manifest, root, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for e, m in zip(entries, predict(model, images)):
        save_mask(out / f"{e.tile_id}.png", m)
    print(f"predict: wrote {len(entries)} masks to {out}")
    return 0


def cmd_gradcheck(args):
    from .gradcheck import run_suite

    results = run_suite(seed=args.seed or 0)
    ok = True
    for r in results:
        ok &= r.passed
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<22} max rel err {r.max_rel_err:.3e}  "
              f"(tol {r.tol:.0e}, {r.seconds:.2f}s)")
    if not ok:
        raise NumericalFailure("gradient check failed")
    return 0


def cmd_ablate(args):
    cfg = load_run_config(args)
    manifest, root = _load_manifest(args.manifest)
    images, masks, _ = load_split(manifest, root, "train")
    test_entries = manifest.split("test")
    if len(images) == 0 or not test_entries:
        raise UsageError("ablation needs both train and test tiles")
    test_images, _, _ = load_split(manifest, root, "test")
    refs = [load_mask(_require(root / reference_dir(e.mask_path, args.reference) / f"{e.tile_id}.png",
                               "reference mask")) for e in test_entries]
    out = Path(args.out)
    cfg.model.input_size = tuple(images.shape[2:])
    cfg.model.validate()
    cfg.echo(out, [args.manifest])
    tag = manifest.identity_hash("test")
    reports = {}
    for decoder in ("gl_trans", "plain_conv"):
        cfg.model.decoder = decoder
        cfg.model.validate()
        model = build(cfg.model)
        train(model, images, masks, cfg.train, out_dir=out / decoder)
        reports[decoder] = evaluate(predict(model, test_images), refs, tag)
        write_report(out / decoder / "metrics", reports[decoder], {"reference": args.reference})
    delta = compare_reports(reports["gl_trans"], reports["plain_conv"])
    with open(out / "ablation.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["variant", "coral_iou", "accuracy"])
        for decoder, rep in reports.items():
            wr.writerow([decoder, f"{rep.mean_iou:.4f}", f"{rep.accuracy:.4f}"])
        wr.writerow(["delta", f"{delta['delta_iou']:.4f}", f"{delta['delta_accuracy']:.4f}"])
    for decoder, rep in reports.items():
        print(f"{decoder:<11} IoU {rep.mean_iou:7.2f}%  Acc {rep.accuracy:7.2f}%")
    print(f"{'delta':<11} IoU {delta['delta_iou']:+7.2f}   Acc {delta['delta_accuracy']:+7.2f}")
    return 0


# -- argument parsing --------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="ukf", description="UKANFormer coral segmentation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON run configuration")
            sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                            help="override one config field (repeatable)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("synth", help="generate synthetic scenes, noisy labels and tiles")
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("tile", help="tile scenes listed in a CSV")
    common(sp)
    sp.add_argument("--scenes", required=True)
    sp.set_defaults(func=cmd_tile)

    sp = sub.add_parser("train", help="train a model on the manifest's train split")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--decoder", choices=("gl_trans", "plain_conv"))
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score predictions against a reference mask set")
    common(sp, config=False)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--predictions", help="directory of <tile_id>.png masks instead of a checkpoint")
    sp.add_argument("--reference", choices=REFERENCES, default="clean")
    sp.add_argument("--split", default="test")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="write predicted masks for one split")
    common(sp, config=False)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", default="test")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("ablate", help="train gl_trans and plain_conv decoders with a shared seed")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--reference", choices=REFERENCES, default="clean")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, UKFError, FloatingPointError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
