"""Training loop, evaluation, cross-validation and prediction."""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data_pipeline import NATIVE_HW, Dataset, SplitConfig, batches, kfold, prepare_images, split
from .exceptions import DimensionError, NumericError, ValidationError
from .imageio import read_gray, write_gray
from .loss_optim import OptimizerState, adadelta_step, loss_and_grad, sigmoid_cross_entropy
from .model_arch import Model, build_model, spec_hash, table1_specs
from .tensor_core import sigmoid

__all__ = [
    "THRESHOLD",
    "LogRow",
    "Metrics",
    "CVResult",
    "threshold",
    "metrics_from_logits",
    "fresh_checkpoint",
    "run_epochs",
    "train",
    "evaluate",
    "cross_validate",
    "predict",
    "predict_logits",
    "write_loss_log",
]

logger = logging.getLogger(__name__)

THRESHOLD = 0.5
EVAL_BATCH = 16


@dataclass
class LogRow:
    epoch: int
    train_loss: float
    test_loss: float
    wall_seconds: float


@dataclass
class Metrics:
    mean_loss: float
    pixel_accuracy: float
    iou: float


@dataclass
class CVResult:
    fold_losses: list
    mean: float


def threshold(prob):
    """Probability below 0.5 -> 0, otherwise (0.5 included) -> 1."""
    return np.where(np.asarray(prob) < THRESHOLD, 0, 1).astype(np.uint8)


class _Tally:
    """Running sums for loss, accuracy and IoU across evaluation chunks."""

    def __init__(self):
        self.loss = 0.0
        self.count = 0
        self.correct = 0
        self.inter = 0
        self.union = 0

    def add(self, logits, targets):
        per_pixel = sigmoid_cross_entropy(logits, targets)
        pred = threshold(sigmoid(logits)).astype(bool)
        true = np.asarray(targets) > 0.5
        self.loss += float(per_pixel.sum())
        self.count += per_pixel.size
        self.correct += int((pred == true).sum())
        self.inter += int((pred & true).sum())
        self.union += int((pred | true).sum())

    def metrics(self) -> Metrics:
        iou = 1.0 if self.union == 0 else self.inter / self.union
        return Metrics(self.loss / self.count, self.correct / self.count, iou)


def metrics_from_logits(logits, targets) -> Metrics:
    """Loss, pixel accuracy and pooled IoU for a batch of logits."""
    t = _Tally()
    t.add(logits, targets)
    return t.metrics()


def _as_model(source) -> Model:
    return source.model if isinstance(source, Checkpoint) else source


def predict_logits(source, images):
    """Inference-mode logits for a ``(N, 1, 101, 101)`` image stack."""
    model = _as_model(source)
    images = np.asarray(images, dtype=np.float64)
    out = []
    for start in range(0, len(images), EVAL_BATCH):
        out.append(model.forward(prepare_images(images[start : start + EVAL_BATCH]), "infer"))
    return np.concatenate(out) if out else np.empty((0, 1, *model.output_hw))


def evaluate(source, dataset: Dataset) -> Metrics:
    """Metrics of a model or checkpoint over a dataset, reduced in id order."""
    if len(dataset) == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    model = _as_model(source)
    ordered = dataset.subset(np.argsort(dataset.ids, kind="stable"))
    tally = _Tally()
    for start in range(0, len(ordered), EVAL_BATCH):
        chunk = ordered.subset(range(start, min(len(ordered), start + EVAL_BATCH)))
        tally.add(model.forward(prepare_images(chunk.images()), "infer"), chunk.masks())
    return tally.metrics()


def fresh_checkpoint(cfg: TrainConfig) -> Checkpoint:
    model = build_model(cfg.seed, cfg.faithful_table1)
    opt = OptimizerState.zeros_like(model.flat_params(), cfg.rho, cfg.eps, cfg.lr_scale)
    return Checkpoint(model, opt, cfg, 0, {"generator": "PCG64", "seed": cfg.seed, "next_epoch": 0})


def run_epochs(ckpt: Checkpoint, train_set: Dataset, cfg: TrainConfig, n_epochs: int,
               test_set: Dataset | None = None, on_epoch=None):
    """Advance ``ckpt`` in place by ``n_epochs`` epochs of mini-batch ADADELTA.

    Batch order for epoch ``e`` is drawn from ``(cfg.seed, e)``, so a run
    resumed from a checkpoint follows the same trajectory as an
    uninterrupted one. ``on_epoch(ckpt, row)`` is called after every epoch;
    ``row`` is a :class:`LogRow` or None when the epoch is not logged.
    Returns the logged rows.
    """
    if len(train_set) == 0:
        raise ValidationError("cannot train on an empty dataset")
    model, opt = ckpt.model, ckpt.optimizer
    log = []
    for _ in range(n_epochs):
        epoch = ckpt.epochs_completed
        t0 = time.perf_counter()
        total = 0.0
        for b, (x, z) in enumerate(batches(train_set, cfg.batch_size, cfg.seed, epoch)):
            logits = model.forward(x, "train")
            lv, grad = loss_and_grad(logits, z, cfg.reduction)
            if not np.isfinite(lv.mean_loss):
                raise NumericError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            grads = [g for pair in model.backward(grad) for g in pair]
            try:
                model.set_flat_params(adadelta_step(model.flat_params(), grads, opt))
            except NumericError as exc:
                raise NumericError(f"{exc} (epoch {epoch + 1}, batch {b + 1})") from exc
            total += lv.mean_loss * len(x)
        ckpt.epochs_completed = epoch + 1
        ckpt.rng_state = {**ckpt.rng_state, "next_epoch": epoch + 1}
        row = None
        if ckpt.epochs_completed % cfg.log_every == 0:
            test_loss = evaluate(model, test_set).mean_loss if test_set else float("nan")
            row = LogRow(epoch + 1, total / len(train_set), test_loss, time.perf_counter() - t0)
            log.append(row)
            logger.info("epoch %d train_loss %.6f test_loss %.6f", row.epoch, row.train_loss, row.test_loss)
        if on_epoch is not None:
            on_epoch(ckpt, row)
    return log


def write_loss_log(path, rows, append=False):
    """CSV with columns ``epoch,train_loss,test_loss,wall_seconds``."""
    new = not append or not os.path.exists(path)
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["epoch", "train_loss", "test_loss", "wall_seconds"])
        for r in rows:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.test_loss), f"{r.wall_seconds:.4f}"])


def train(dataset: Dataset, cfg: TrainConfig, resume: Checkpoint | None = None,
          checkpoint_path=None, log_path=None, on_epoch=None):
    """Split, build and train; returns ``(Checkpoint, loss_log)``.

    With ``resume``, training continues from that checkpoint up to
    ``cfg.epochs`` total epochs. Only ``epochs``, ``log_every`` and
    ``checkpoint_every`` may differ from the checkpoint's own config.
    Checkpoints are written to ``checkpoint_path`` every
    ``cfg.checkpoint_every`` epochs and at the end.
    """
    if len(dataset) == 0:
        raise ValidationError("cannot train on an empty dataset")
    train_set, test_set = split(dataset, SplitConfig(cfg.train_fraction, cfg.seed))
    if resume is None:
        ckpt = fresh_checkpoint(cfg)
    else:
        if resume.config.trajectory_key() != cfg.trajectory_key():
            raise ValidationError("resume config differs from the checkpoint's in more than epochs/logging")
        ckpt = Checkpoint(resume.model.copy(), resume.optimizer.copy(), cfg,
                          resume.epochs_completed, dict(resume.rng_state))
    ckpt.config = cfg
    remaining = max(0, cfg.epochs - ckpt.epochs_completed)
    if log_path is not None:
        write_loss_log(log_path, [], append=resume is not None)

    def _after_epoch(c, row):
        if log_path is not None and row is not None:
            write_loss_log(log_path, [row], append=True)
        if checkpoint_path is not None and cfg.checkpoint_every and c.epochs_completed % cfg.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, c)
        if on_epoch is not None:
            on_epoch(c, row)

    log = run_epochs(ckpt, train_set, cfg, remaining, test_set, _after_epoch)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, ckpt)
    return ckpt, log


def cross_validate(dataset: Dataset, k: int = 10, warm: Checkpoint | None = None,
                   epochs_per_fold: int = 500, cfg: TrainConfig | None = None) -> CVResult:
    """k-fold validation loss, each fold starting from ``warm`` (or a fresh model).

    Every fold trains ``epochs_per_fold`` epochs on its training part and
    reports the mean loss on its held-out fold.
    """
    cfg = cfg or (warm.config if warm is not None else TrainConfig())
    losses = []
    for i, (train_part, val_part) in enumerate(kfold(dataset, k, cfg.seed)):
        if warm is not None:
            ckpt = Checkpoint(warm.model.copy(), warm.optimizer.copy(), cfg,
                              warm.epochs_completed, dict(warm.rng_state))
        else:
            ckpt = fresh_checkpoint(cfg)
        run_epochs(ckpt, train_part, cfg, epochs_per_fold)
        losses.append(evaluate(ckpt.model, val_part).mean_loss)
        logger.info("fold %d/%d validation loss %.6f", i + 1, k, losses[-1])
    return CVResult(losses, sum(losses) / len(losses))


def _load_for_inference(source):
    if isinstance(source, Checkpoint):
        return source
    # first pass reads the recorded config; second enforces the standard architecture hash for it
    ckpt = load_checkpoint(source)
    expected = spec_hash(table1_specs(ckpt.config.faithful_table1))
    return load_checkpoint(source, expected_spec_hash=expected)


def predict(checkpoint, image_file, out_mask_file, out_prob_file=None):
    """Segment one 101x101 image file; writes a 0/255 mask and optionally probabilities.

    ``out_prob_file`` ending in ``.npy`` keeps the float64 map; an image
    extension stores it quantised to 8 bits. Returns ``(mask, prob)``.
    """
    ckpt = _load_for_inference(checkpoint)
    pixels = read_gray(image_file)
    if pixels.shape != NATIVE_HW:
        raise DimensionError(f"{image_file}: expected 101x101 pixels, got {pixels.shape[0]}x{pixels.shape[1]}")
    image = pixels.astype(np.float64)[None, None] / 255.0
    prob = sigmoid(predict_logits(ckpt, image))[0, 0]
    mask = threshold(prob)
    write_gray(out_mask_file, mask * 255)
    if out_prob_file is not None:
        if str(out_prob_file).endswith(".npy"):
            np.save(out_prob_file, prob)
        else:
            write_gray(out_prob_file, np.clip(np.rint(prob * 255.0), 0, 255))
    return mask, prob
