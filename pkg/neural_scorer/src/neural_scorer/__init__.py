"""Neural context scorer: a residual image classifier trained on masked
context samples and served over the line-delimited stdio scoring protocol.

The package talks to the augmentation pipeline only through its on-disk
interfaces: the context dataset directory (``samples/*.png`` +
``labels.csv`` + ``classes.json``), the model checkpoint file, and the
handshake/request/response line protocol.
"""

from .data import ContextDirectory, ContextItem
from .model import build_model, load_model, preprocess_batch, save_model
from .train import NeuralTrainConfig, TrainedScorer, evaluate, train, validation_split

__all__ = [
    "ContextDirectory",
    "ContextItem",
    "NeuralTrainConfig",
    "TrainedScorer",
    "build_model",
    "evaluate",
    "load_model",
    "preprocess_batch",
    "save_model",
    "train",
    "validation_split",
]
