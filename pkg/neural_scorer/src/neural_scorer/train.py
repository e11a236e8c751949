"""Fine-tuning loop for the neural context scorer.

The schedule follows the two-phase recipe: a first phase at the base
learning rate, then a second phase at one tenth of it — 1500 + 500
iterations when the dataset has a single object category, 4000 + 2000 with
more. Validation loss is checked every ``eval_every`` iterations with
early stopping, and the weights that achieved the best validation loss are
the ones returned. ADAM is used throughout (the choice of optimizer for
this classifier is a documented assumption).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data import ContextDirectory
from .model import build_model, predict_probs, preprocess_batch

SINGLE_CLASS_SCHEDULE = (1500, 500)
MULTI_CLASS_SCHEDULE = (4000, 2000)
LR_DROP_FACTOR = 10.0


@dataclass(frozen=True)
class NeuralTrainConfig:
    arch: str = "resnet50"
    pretrained: bool = True
    input_size: int = 300
    batch_size: int = 32
    learning_rate: float = 1e-3
    iterations: tuple[int, int] | None = None
    eval_every: int = 50
    patience: int = 4
    val_fraction: float = 0.2
    seed: int = 0
    classes: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.input_size < 8:
            raise ValueError(f"input_size must be >= 8, got {self.input_size}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.iterations is not None:
            first, second = self.iterations
            if first < 0 or second < 0:
                raise ValueError(f"iteration counts must be >= 0, got {self.iterations}")


@dataclass(frozen=True)
class EvalPoint:
    iteration: int
    learning_rate: float
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainedScorer:
    """Trained model plus everything needed to serve or audit it."""

    model: nn.Module
    class_names: tuple[str, ...]
    arch: str
    input_size: int
    pretrained_loaded: bool
    init_note: str
    history: tuple[EvalPoint, ...] = field(default_factory=tuple)

    def score_batch(self, images: np.ndarray) -> np.ndarray:
        return predict_probs(self.model, images, self.input_size)


def schedule_for(n_categories: int) -> tuple[int, int]:
    """Two-phase iteration counts keyed on the number of object categories."""
    return SINGLE_CLASS_SCHEDULE if n_categories == 1 else MULTI_CLASS_SCHEDULE


def validation_split(
    n: int, val_fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle split into (train_indices, val_indices).

    Same contract as the pipeline's builtin trainer, so accuracies computed
    here and there refer to identical sample sets.
    """
    if n < 2:
        raise ValueError(f"need at least 2 samples to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = min(max(1, round(n * val_fraction)), n - 1)
    return perm[n_val:], perm[:n_val]


def evaluate(
    model: nn.Module,
    images: np.ndarray,
    labels: np.ndarray,
    indices: np.ndarray,
    input_size: int,
    batch_size: int = 64,
) -> tuple[float, float]:
    """(mean cross-entropy, accuracy) over ``images[indices]``."""
    model.eval()
    loss_sum = 0.0
    correct = 0
    criterion = nn.CrossEntropyLoss(reduction="sum")
    with torch.no_grad():
        for start in range(0, len(indices), batch_size):
            idx = indices[start : start + batch_size]
            x = preprocess_batch(images[idx], input_size)
            y = torch.from_numpy(labels[idx])
            logits = model(x)
            loss_sum += float(criterion(logits, y))
            correct += int((logits.argmax(dim=1) == y).sum())
    n = len(indices)
    return loss_sum / n, correct / n


def train(contexts: Path | ContextDirectory, cfg: NeuralTrainConfig) -> TrainedScorer:
    """Fine-tune a residual classifier on a context dataset directory.

    Deterministic for a fixed config: seeding covers model init, the
    train/validation split, and the batch order, and all data movement is
    single-threaded.
    """
    ds = contexts if isinstance(contexts, ContextDirectory) else ContextDirectory.load(contexts)
    if cfg.classes is not None and tuple(cfg.classes) != ds.class_names:
        raise ValueError(
            f"class mismatch: config expects {tuple(cfg.classes)}, "
            f"dataset has {ds.class_names}"
        )

    torch.manual_seed(cfg.seed)
    model, pretrained_loaded, note = build_model(
        cfg.arch, ds.n_classes, pretrained=cfg.pretrained
    )
    images = ds.load_images()
    labels = ds.labels()
    train_idx, val_idx = validation_split(len(ds), cfg.val_fraction, cfg.seed)
    phases = cfg.iterations or schedule_for(len(ds.categories))

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    criterion = nn.CrossEntropyLoss()
    batch_rng = np.random.default_rng([cfg.seed, 1])

    def batch_indices():
        while True:
            order = batch_rng.permutation(train_idx)
            for start in range(0, len(order) - cfg.batch_size + 1, cfg.batch_size):
                yield order[start : start + cfg.batch_size]
            if len(order) < cfg.batch_size:
                yield order  # tiny dataset: one undersized batch per pass

    history: list[EvalPoint] = []
    best_val = math.inf
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    stale = 0
    iteration = 0
    stop = False
    batches = batch_indices()

    for phase, n_iter in enumerate(phases):
        if stop:
            break
        lr = cfg.learning_rate / (LR_DROP_FACTOR**phase)
        for group in optimizer.param_groups:
            group["lr"] = lr
        running = 0.0
        since_eval = 0
        for _ in range(n_iter):
            model.train()
            idx = next(batches)
            x = preprocess_batch(images[idx], cfg.input_size)
            y = torch.from_numpy(labels[idx])
            optimizer.zero_grad()
            loss = criterion(model(x), y)
            if not math.isfinite(float(loss)):
                raise ArithmeticError(
                    f"non-finite training loss at iteration {iteration}"
                )
            loss.backward()
            optimizer.step()
            running += float(loss)
            since_eval += 1
            iteration += 1
            if iteration % cfg.eval_every == 0:
                val_loss, val_acc = evaluate(
                    model, images, labels, val_idx, cfg.input_size
                )
                history.append(
                    EvalPoint(
                        iteration=iteration,
                        learning_rate=lr,
                        train_loss=running / since_eval,
                        val_loss=val_loss,
                        val_accuracy=val_acc,
                    )
                )
                running, since_eval = 0.0, 0
                if val_loss < best_val - 1e-9:
                    best_val = val_loss
                    best_state = {
                        k: v.detach().clone() for k, v in model.state_dict().items()
                    }
                    stale = 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        stop = True
                        break

    if iteration > 0 and (not history or history[-1].iteration != iteration):
        val_loss, val_acc = evaluate(model, images, labels, val_idx, cfg.input_size)
        lr = cfg.learning_rate / (LR_DROP_FACTOR ** (len(phases) - 1))
        history.append(
            EvalPoint(
                iteration=iteration,
                learning_rate=lr,
                train_loss=running / since_eval if since_eval else val_loss,
                val_loss=val_loss,
                val_accuracy=val_acc,
            )
        )
        if val_loss < best_val - 1e-9:
            best_val = val_loss
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    model.load_state_dict(best_state)
    model.eval()
    return TrainedScorer(
        model=model,
        class_names=ds.class_names,
        arch=cfg.arch,
        input_size=cfg.input_size,
        pretrained_loaded=pretrained_loaded,
        init_note=note,
        history=tuple(history),
    )
