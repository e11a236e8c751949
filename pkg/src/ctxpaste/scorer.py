"""Context scorer: class probabilities for a masked box given its surroundings.

The builtin scorer is multinomial logistic regression on downsampled pixels,
trained from scratch with mini-batch gradient descent. It exists so the whole
pipeline runs and tests without any deep-learning dependency; heavier models
can replace it through the external scoring protocol, honoring the same
contract (a probability vector over the K categories plus background).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .contexts import ContextDataset, ContextualSample

FEATURE_SIZE = 32
MAGIC = b"CTXSCOR1"
BACKGROUND_NAME = "background"


@dataclass(frozen=True)
class ScoreVector:
    """Probabilities over K categories plus background (last index)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.ndim != 1 or p.size < 2:
            raise ValueError(f"probs must be a vector of >= 2 entries, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("probs must be finite and nonnegative")
        if abs(float(p.sum()) - 1.0) > 1e-6:
            raise ValueError(f"probs sum to {float(p.sum())}, not 1 within 1e-6")

    @property
    def background(self) -> float:
        return float(self.probs[-1])

    def category_prob(self, index: int) -> float:
        if not 0 <= index < self.probs.size - 1:
            raise IndexError(f"category index {index} out of range")
        return float(self.probs[index])


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    learning_rate: float


@dataclass(frozen=True)
class TrainParams:
    learning_rate: float = 1e-2
    weight_decay: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 60
    early_stop_patience: int = 5
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be > 0 and weight_decay >= 0")
        if self.batch_size < 1 or self.max_epochs < 0 or self.early_stop_patience < 1:
            raise ValueError("batch_size/patience must be >= 1, max_epochs >= 0")
        if not (0 < self.val_fraction < 1):
            raise ValueError(f"val_fraction must be in (0, 1), got {self.val_fraction}")


def sample_features(sample: ContextualSample, feature_size: int = FEATURE_SIZE) -> np.ndarray:
    """Downsampled, scaled, flattened pixels with a trailing bias term."""
    px = sample.pixels
    if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] != px.shape[1]:
        raise ValueError(f"expected square RGB sample, got shape {px.shape}")
    small = np.asarray(
        Image.fromarray(px, mode="RGB").resize(
            (feature_size, feature_size), Image.BILINEAR
        ),
        dtype=np.float64,
    )
    return np.concatenate([small.reshape(-1) / 255.0, [1.0]])


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted for numerical stability."""
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def objective_and_gradient(
    weights: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    weight_decay: float,
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy plus L2 penalty, and its gradient in the weights.

    gradient = X^T (P - Y) / B + weight_decay * W, with P the softmax
    probabilities and Y one-hot labels over a batch of size B.
    """
    n = features.shape[0]
    probs = softmax(features @ weights)
    data_loss = float(-np.log(probs[np.arange(n), labels] + 1e-300).mean())
    loss = data_loss + weight_decay * 0.5 * float((weights**2).sum())
    delta = probs
    delta[np.arange(n), labels] -= 1.0
    grad = features.T @ delta / n + weight_decay * weights
    return loss, grad


def validation_split(
    n: int, val_fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle split into (train_indices, val_indices).

    Shared by every scorer implementation so accuracy comparisons use the
    same samples on both sides.
    """
    if n < 2:
        raise ValueError(f"need at least 2 samples to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = min(max(1, round(n * val_fraction)), n - 1)
    return perm[n_val:], perm[:n_val]


@dataclass(frozen=True)
class BuiltinScorer:
    """Linear softmax scorer over downsampled pixels."""

    weights: np.ndarray
    class_names: tuple[str, ...]
    feature_size: int = FEATURE_SIZE
    history: tuple[EpochStats, ...] = ()

    def __post_init__(self):
        d = self.feature_size * self.feature_size * 3 + 1
        if self.weights.shape != (d, len(self.class_names)):
            raise ValueError(
                f"weights shape {self.weights.shape} does not match "
                f"{d} features x {len(self.class_names)} classes"
            )
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def background_index(self) -> int:
        return len(self.class_names) - 1

    def score(self, sample: ContextualSample) -> ScoreVector:
        x = sample_features(sample, self.feature_size)
        return ScoreVector(probs=softmax(x @ self.weights))


def zero_scorer(class_names: tuple[str, ...], feature_size: int = FEATURE_SIZE) -> BuiltinScorer:
    d = feature_size * feature_size * 3 + 1
    return BuiltinScorer(
        weights=np.zeros((d, len(class_names))), class_names=class_names
    )


def train_builtin(dataset: ContextDataset, p: TrainParams) -> BuiltinScorer:
    """Fit the builtin scorer by mini-batch gradient descent.

    Tracks loss on a held-out validation split; on a plateau the learning
    rate drops once by 10x, a second plateau stops training. The returned
    scorer carries the best-validation weights.
    """
    labels_present = {s.label for s in dataset.samples}
    if len(labels_present) < 2:
        raise ValueError(
            f"training needs >= 2 classes, dataset has {sorted(labels_present)}"
        )
    class_names = dataset.categories + (BACKGROUND_NAME,)
    k = len(class_names)
    X = np.stack([sample_features(s) for s in dataset.samples])
    y = np.array([s.label for s in dataset.samples], dtype=np.int64)
    if y.max() >= k:
        raise ValueError(f"label {y.max()} out of range for {k} classes")

    weights = np.zeros((X.shape[1], k))
    if p.max_epochs == 0:
        return BuiltinScorer(weights=weights, class_names=class_names)

    train_idx, val_idx = validation_split(len(y), p.val_fraction, p.seed)
    rng = np.random.default_rng(p.seed)
    lr = p.learning_rate
    best_val = np.inf
    best_weights = weights.copy()
    stale = 0
    lr_dropped = False
    history = []

    for epoch in range(p.max_epochs):
        order = rng.permutation(train_idx)
        for start in range(0, len(order), p.batch_size):
            batch = order[start : start + p.batch_size]
            loss, grad = objective_and_gradient(
                weights, X[batch], y[batch], p.weight_decay
            )
            if not np.isfinite(loss):
                raise ArithmeticError(f"non-finite training loss at epoch {epoch}")
            weights -= lr * grad
        train_loss, _ = objective_and_gradient(
            weights, X[train_idx], y[train_idx], p.weight_decay
        )
        val_loss, _ = objective_and_gradient(
            weights, X[val_idx], y[val_idx], p.weight_decay
        )
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise ArithmeticError(f"non-finite loss at epoch {epoch}")
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=train_loss,
                val_loss=val_loss,
                learning_rate=lr,
            )
        )
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_weights = weights.copy()
            stale = 0
        else:
            stale += 1
            if stale >= p.early_stop_patience:
                if lr_dropped:
                    break
                lr /= 10.0
                lr_dropped = True
                stale = 0

    return BuiltinScorer(
        weights=best_weights, class_names=class_names, history=tuple(history)
    )


def dataset_accuracy(
    scorer: BuiltinScorer, dataset: ContextDataset, indices: np.ndarray | None = None
) -> float:
    """Top-1 accuracy over the whole dataset or a subset of sample indices."""
    samples = dataset.samples
    if indices is not None:
        samples = [samples[i] for i in indices]
    X = np.stack([sample_features(s, scorer.feature_size) for s in samples])
    y = np.array([s.label for s in samples])
    pred = np.argmax(X @ scorer.weights, axis=1)
    return float((pred == y).mean())


def save_scorer(scorer: BuiltinScorer, path: Path):
    """Binary format: magic, u32 header length, JSON header, f64-LE weights."""
    header = json.dumps(
        {
            "feature_size": scorer.feature_size,
            "class_names": list(scorer.class_names),
            "shape": list(scorer.weights.shape),
        }
    ).encode("utf-8")
    body = np.ascontiguousarray(scorer.weights, dtype="<f8").tobytes()
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(header)) + header + body)


def load_scorer(path: Path) -> BuiltinScorer:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a scorer file (bad magic)")
    (header_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    header_end = len(MAGIC) + 4 + header_len
    if len(raw) < header_end:
        raise ValueError(f"{path}: truncated header")
    try:
        header = json.loads(raw[len(MAGIC) + 4 : header_end].decode("utf-8"))
        shape = tuple(header["shape"])
        class_names = tuple(header["class_names"])
        feature_size = int(header["feature_size"])
    except (json.JSONDecodeError, KeyError, UnicodeDecodeError, TypeError) as e:
        raise ValueError(f"{path}: corrupt scorer header: {e}") from e
    expected = int(np.prod(shape)) * 8
    body = raw[header_end:]
    if len(body) != expected:
        raise ValueError(
            f"{path}: weight payload is {len(body)} bytes, expected {expected}"
        )
    weights = np.frombuffer(body, dtype="<f8").reshape(shape).astype(np.float64)
    return BuiltinScorer(
        weights=weights, class_names=class_names, feature_size=feature_size
    )
