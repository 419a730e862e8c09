"""scikit-learn compatible wrapper around the training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_images, check_masks
from .checkpoint import Checkpoint
from .config import TrainConfig
from .data_pipeline import Dataset, Sample
from .training import fresh_checkpoint, metrics_from_logits, predict_logits, run_epochs, threshold
from .tensor_core import sigmoid

__all__ = ["SaltSegmenter"]


class SaltSegmenter(BaseEstimator):
    """Per-pixel salt segmentation of 101x101 seismic images.

    ``X`` is an image stack shaped ``(n, 101, 101)`` (or with a channel axis)
    with values in [0, 1]; ``y`` holds the matching 0/1 masks. ``fit`` trains
    on every sample it is given; hold out data yourself if you need it.

    Parameters
    ----------
    epochs : int
        Passes over the training data.
    batch_size : int
    lr_scale : float
        Multiplier on every ADADELTA step.
    rho, eps : float
        ADADELTA decay and conditioning constants.
    seed : int
        Seeds weight initialisation and the per-epoch batch order.
    faithful_table1 : bool
        Keep the ReLU on the last conv layer. Every prediction is then 1.
    reduction : {"mean", "sample"}
        Average the loss over all pixels, or sum per sample then average.
    warm_start : bool
        Continue from the current weights on repeated ``fit`` calls.

    Attributes
    ----------
    checkpoint_ : Checkpoint
        Model weights, optimizer state and epoch count after fitting.
    loss_curve_ : list of float
        Mean training loss per epoch.
    """

    def __init__(self, epochs=100, batch_size=100, lr_scale=0.01, rho=0.95, eps=1e-6,
                 seed=0, faithful_table1=False, reduction="mean", warm_start=False):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_scale = lr_scale
        self.rho = rho
        self.eps = eps
        self.seed = seed
        self.faithful_table1 = faithful_table1
        self.reduction = reduction
        self.warm_start = warm_start

    def _config(self):
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr_scale=self.lr_scale,
            rho=self.rho, eps=self.eps, seed=self.seed,
            faithful_table1=self.faithful_table1, reduction=self.reduction,
        )

    def fit(self, X, y, callback=None):
        """Train on ``(X, y)``.

        ``callback(checkpoint, train_loss)`` runs after each epoch; raising
        ``StopIteration`` from it ends training early.
        """
        X = check_images(X)
        y = check_masks(y, len(X))
        cfg = self._config()
        data = Dataset([Sample(X[i], y[i], f"{i:06d}") for i in range(len(X))], "disk")
        if not (self.warm_start and hasattr(self, "checkpoint_")):
            self.checkpoint_ = fresh_checkpoint(cfg)
            self.loss_curve_ = []
        ckpt = self.checkpoint_

        def _record(c, row):
            self.loss_curve_.append(row.train_loss)
            if callback is not None:
                callback(c, row.train_loss)

        try:
            run_epochs(ckpt, data, cfg, self.epochs, on_epoch=_record)
        except StopIteration:
            pass
        self.n_epochs_ = ckpt.epochs_completed
        return self

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "SaltSegmenter":
        cfg = ckpt.config
        est = cls(epochs=cfg.epochs, batch_size=cfg.batch_size, lr_scale=cfg.lr_scale,
                  rho=cfg.rho, eps=cfg.eps, seed=cfg.seed,
                  faithful_table1=cfg.faithful_table1, reduction=cfg.reduction)
        est.checkpoint_ = ckpt
        est.loss_curve_ = []
        est.n_epochs_ = ckpt.epochs_completed
        return est

    def decision_function(self, X):
        """Pre-sigmoid logits, shaped ``(n, 101, 101)``."""
        check_is_fitted(self, "checkpoint_")
        return predict_logits(self.checkpoint_, check_images(X))[:, 0]

    def predict_proba(self, X):
        """Salt probability per pixel, shaped ``(n, 101, 101)``."""
        return sigmoid(self.decision_function(X))

    def predict(self, X):
        return threshold(self.predict_proba(X))

    def score(self, X, y):
        """Pixel accuracy of thresholded predictions."""
        X = check_images(X)
        y = check_masks(y, len(X))
        return metrics_from_logits(self.decision_function(X)[:, None], y).pixel_accuracy

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.input_tags.three_d_array = True
        tags.non_deterministic = False
        return tags
