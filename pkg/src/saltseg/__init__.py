"""From-scratch convolutional auto-encoder for salt segmentation of seismic images."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data_pipeline import (
    Dataset,
    Sample,
    SplitConfig,
    batches,
    kfold,
    load_dataset,
    prepare_input,
    save_dataset,
    split,
    synth_generate,
)
from .estimator import SaltSegmenter
from .loss_optim import OptimizerState, adadelta_step, loss_and_grad, sigmoid_cross_entropy
from .model_arch import LayerSpec, Model, build_model, table1_specs
from .training import Metrics, cross_validate, evaluate, predict, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "Dataset",
    "LayerSpec",
    "Metrics",
    "Model",
    "OptimizerState",
    "SaltSegmenter",
    "Sample",
    "SplitConfig",
    "TrainConfig",
    "adadelta_step",
    "batches",
    "build_model",
    "cross_validate",
    "evaluate",
    "kfold",
    "load_checkpoint",
    "load_dataset",
    "loss_and_grad",
    "predict",
    "prepare_input",
    "save_checkpoint",
    "save_dataset",
    "sigmoid_cross_entropy",
    "split",
    "synth_generate",
    "table1_specs",
    "train",
]
