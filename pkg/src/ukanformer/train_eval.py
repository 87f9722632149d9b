"""Training loop, plateau learning-rate schedule and coral segmentation metrics."""
import csv
import logging
import math
from dataclasses import asdict, dataclass, fields, field
from pathlib import Path

import numpy as np

from . import checkpoint
from . import functional as F
from .data import augment as augment_pair
from .errors import ComparisonError, ConfigError, ContractError, ShapeError
from .model import argmax_mask
from .nn import sgd_step
from .tensor import no_grad

log = logging.getLogger(__name__)

# sub-seed tags
_SHUFFLE, _AUGMENT = 21, 22


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 300
    lr0: float = 2.5e-6
    factor: float = 0.5
    patience: int = 10
    min_lr: float = 1e-8
    threshold: float = 1e-4
    augment: bool = True
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr0 < 0:
            raise ConfigError(f"lr0 must be >= 0, got {self.lr0}")
        if not 0 < self.factor < 1:
            raise ConfigError(f"factor must be in (0, 1), got {self.factor}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


class PlateauScheduler:
    """Reduce the learning rate when the monitored loss stops improving.

    An epoch counts as an improvement when ``loss < best * (1 - threshold)``.
    After ``patience`` consecutive non-improving epochs the rate becomes
    ``max(lr * factor, min_lr)`` and the counter restarts.
    """

    def __init__(self, lr, factor=0.5, patience=10, min_lr=1e-8, threshold=1e-4):
        if not 0 < factor < 1:
            raise ConfigError(f"factor must be in (0, 1), got {factor}")
        if patience < 1:
            raise ConfigError(f"patience must be >= 1, got {patience}")
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.threshold = threshold
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, loss):
        if loss < self.best * (1.0 - self.threshold) or self.best == math.inf:
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.bad_epochs = 0
        return self.lr

    def state(self):
        return {"lr": self.lr, "best": self.best, "bad_epochs": self.bad_epochs}


def plateau_schedule(history, lr, factor=0.5, patience=10, min_lr=1e-8, threshold=1e-4):
    """Learning rate after replaying a loss history through :class:`PlateauScheduler`."""
    sched = PlateauScheduler(lr, factor, patience, min_lr, threshold)
    for loss in history:
        sched.step(loss)
    return sched.lr


class NonFiniteLossError(ContractError):
    pass


def train(model, images, masks, cfg, out_dir=None, log_every=0, on_epoch=None):
    """Train ``model`` in place with plain SGD on cross-entropy.

    ``images`` is (N, 3, H, W) float, ``masks`` (N, H, W) in {0, 1}.
    Returns the history as a list of ``(epoch, mean_loss, lr)``; the lr is
    the one used during that epoch. When ``out_dir`` is given, history.csv
    and checkpoints (every ``cfg.checkpoint_every`` epochs, plus final.ukf)
    are written there. ``on_epoch(epoch, model)`` is called after every
    epoch; a true return value ends training early.
    """
    images = np.asarray(images)
    masks = np.asarray(masks)
    n = len(images)
    if n < 1:
        raise ContractError("training needs at least one tile")
    if images.shape[2:] != tuple(model.config.input_size):
        raise ShapeError(f"tile size {images.shape[2:]} does not match model input {model.config.input_size}")
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    dtype = model.parameters()[0].dtype
    rng_shuffle = np.random.default_rng([cfg.seed, _SHUFFLE])
    rng_aug = np.random.default_rng([cfg.seed, _AUGMENT])
    sched = PlateauScheduler(cfg.lr0, cfg.factor, cfg.patience, cfg.min_lr, cfg.threshold)
    params = model.parameters()
    history = []
    last_good = checkpoint.snapshot(model)
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        lr = sched.lr
        order = rng_shuffle.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = images[idx], masks[idx]
            if cfg.augment:
                pairs = [augment_pair(x, y, rng_aug) for x, y in zip(xb, yb)]
                xb = np.stack([p[0] for p in pairs])
                yb = np.stack([p[1] for p in pairs])
            loss = F.cross_entropy(model(xb.astype(dtype)), yb)
            value = float(loss.item())
            if not math.isfinite(value):
                checkpoint.restore(model, last_good)
                if out:
                    checkpoint.save(out / "last_finite.ukf", model)
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch}; last finite state restored")
            loss.backward()
            sgd_step(params, lr)
            total += value * len(idx)
            count += len(idx)
        mean_loss = total / count
        history.append((epoch, mean_loss, lr))
        sched.step(mean_loss)
        last_good = checkpoint.snapshot(model)
        if log_every and epoch % log_every == 0:
            log.info("epoch %d loss %.5f lr %.3g", epoch, mean_loss, lr)
        if out and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            checkpoint.save(out / f"epoch{epoch:04d}.ukf", model)
        stop = on_epoch is not None and on_epoch(epoch, model)
        model.train()  # the callback may have switched to eval
        if stop:
            break
    if out:
        write_history(out / "history.csv", history)
        checkpoint.save(out / "final.ukf", model)
    return history


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["epoch", "loss", "lr"])
        for epoch, loss, lr in history:
            wr.writerow([epoch, repr(float(loss)), repr(float(lr))])


def predict(model, images, batch_size=8):
    """Eval-mode argmax masks for a stack of images."""
    model.eval()
    dtype = model.parameters()[0].dtype
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            logits = model(np.asarray(images[start:start + batch_size], dtype=dtype))
            out.append(argmax_mask(logits.data))
    return np.concatenate(out) if out else np.zeros((0,) + tuple(model.config.input_size), np.uint8)


# -- metrics ----------------------------------------------------------------------

def confusion(pred, ref):
    """(TP, FP, FN, TN) for one binary mask pair, coral = positive."""
    pred = np.asarray(pred)
    ref = np.asarray(ref)
    if pred.shape != ref.shape:
        raise ShapeError(f"prediction {pred.shape} and reference {ref.shape} differ")
    p = pred.astype(bool)
    r = ref.astype(bool)
    tp = int(np.count_nonzero(p & r))
    fp = int(np.count_nonzero(p & ~r))
    fn = int(np.count_nonzero(~p & r))
    return tp, fp, fn, p.size - tp - fp - fn


def coral_iou(pred, ref):
    """Coral-class IoU in [0, 1]; ``None`` when neither mask contains coral."""
    tp, fp, fn, _ = confusion(pred, ref)
    union = tp + fp + fn
    return None if union == 0 else tp / union


@dataclass
class MetricsReport:
    per_image_iou: list = field(default_factory=list)
    mean_iou: float = float("nan")
    accuracy: float = float("nan")
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    n_images: int = 0
    n_excluded: int = 0
    test_set: str = ""

    def to_dict(self):
        return asdict(self)


def mean_coral_iou(pairs):
    """Per-image IoU averaged over images, as a percentage; empty-union images are skipped."""
    vals = [v for v in (coral_iou(p, r) for p, r in pairs) if v is not None]
    return 100.0 * sum(vals) / len(vals) if vals else float("nan")


def pixel_accuracy(pairs):
    """Micro-averaged pixel accuracy over all pairs, as a percentage."""
    correct = total = 0
    for p, r in pairs:
        tp, fp, fn, tn = confusion(p, r)
        correct += tp + tn
        total += tp + fp + fn + tn
    return 100.0 * correct / total if total else float("nan")


def evaluate(preds, refs, test_set=""):
    """Build a :class:`MetricsReport` from aligned prediction/reference masks."""
    if len(preds) != len(refs):
        raise ShapeError(f"{len(preds)} predictions vs {len(refs)} references")
    rep = MetricsReport(test_set=test_set, n_images=len(preds))
    for p, r in zip(preds, refs):
        tp, fp, fn, tn = confusion(p, r)
        rep.tp += tp
        rep.fp += fp
        rep.fn += fn
        rep.tn += tn
        union = tp + fp + fn
        if union == 0:
            rep.n_excluded += 1
        else:
            rep.per_image_iou.append(tp / union)
    if rep.per_image_iou:
        rep.mean_iou = 100.0 * sum(rep.per_image_iou) / len(rep.per_image_iou)
    total = rep.tp + rep.fp + rep.fn + rep.tn
    if total:
        rep.accuracy = 100.0 * (rep.tp + rep.tn) / total
    return rep


def compare_reports(a, b):
    """Deltas ``a - b`` for IoU and accuracy (percentage points) on one test set."""
    if a.test_set != b.test_set:
        raise ComparisonError(f"reports come from different test sets: {a.test_set!r} vs {b.test_set!r}")
    d_iou = a.mean_iou - b.mean_iou
    d_acc = a.accuracy - b.accuracy
    return {"delta_iou": d_iou, "delta_accuracy": d_acc, "iou_drop_exceeds_accuracy": d_iou > d_acc}


def write_report(path_prefix, report, extra=None):
    """Write ``<prefix>.csv`` (per-image IoU) and ``<prefix>.json`` (summary)."""
    import json

    prefix = Path(path_prefix)
    with open(prefix.with_suffix(".csv"), "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["image", "coral_iou"])
        for i, v in enumerate(report.per_image_iou):
            wr.writerow([i, repr(v)])
    summary = {k: v for k, v in report.to_dict().items() if k != "per_image_iou"}
    if extra:
        summary.update(extra)
    with open(prefix.with_suffix(".json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
