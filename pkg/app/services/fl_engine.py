"""
Softmax-regression federated learning primitives

The model is a flat vector holding a (features x classes) weight matrix
followed by one bias per class.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax

from app.core.config import FLParams
from app.core.exceptions import DomainError, ShapeError
from app.models.partition import PartitionSpec
from app.models.scenario import Stream, stream_rng
from app.services.scenario_service import training_label_pool

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticDataset:
    features: np.ndarray
    labels: np.ndarray
    means: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.size)


@dataclass(frozen=True)
class LearningTask:
    """Training pool, per-client shards and the held-out test set"""

    train: SyntheticDataset
    test: SyntheticDataset
    assignments: Tuple[np.ndarray, ...]
    num_classes: int

    @property
    def feature_dim(self) -> int:
        return int(self.train.features.shape[1])

    @property
    def num_clients(self) -> int:
        return len(self.assignments)

    def client_data(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        idx = self.assignments[k]
        return self.train.features[idx], self.train.labels[idx]


def class_means(num_classes: int, feature_dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    return separation * rng.standard_normal((num_classes, feature_dim)) / np.sqrt(feature_dim)


def generate_synthetic_dataset(
    num_samples: int,
    num_classes: int,
    feature_dim: int,
    separation: float,
    rng: np.random.Generator,
    means: Optional[np.ndarray] = None,
    labels: Optional[np.ndarray] = None,
) -> SyntheticDataset:
    """
    Gaussian-mixture samples: x = mu_y + N(0, I), labels cycling over classes

    Class means are separation * N(0, I) / sqrt(D) unless given, so train and
    test pools can share them.
    """
    if num_samples < 1 or num_classes < 1 or feature_dim < 1:
        raise DomainError("dataset dimensions must be positive")
    if means is None:
        means = class_means(num_classes, feature_dim, separation, rng)
    means = np.asarray(means, dtype=float)
    if means.shape != (num_classes, feature_dim):
        raise ShapeError("class means must be (classes x features)")
    labels = np.arange(num_samples) % num_classes if labels is None else np.asarray(labels, dtype=int)
    features = means[labels] + rng.standard_normal((labels.size, feature_dim))
    return SyntheticDataset(features, labels, means)


def build_learning_task(fl: FLParams, partition: PartitionSpec, seed: int) -> LearningTask:
    """Training pool aligned with the label pool the partition was drawn from"""
    means = class_means(fl.num_categories, fl.feature_dim, fl.class_separation, stream_rng(seed, Stream.DATA, 0))
    train = generate_synthetic_dataset(
        fl.train_samples,
        fl.num_categories,
        fl.feature_dim,
        fl.class_separation,
        stream_rng(seed, Stream.DATA, 1),
        means=means,
        labels=training_label_pool(fl),
    )
    test = generate_synthetic_dataset(
        fl.test_samples,
        fl.num_categories,
        fl.feature_dim,
        fl.class_separation,
        stream_rng(seed, Stream.DATA, 2),
        means=means,
    )
    return LearningTask(train, test, tuple(partition.assignments), fl.num_categories)


def init_params(feature_dim: int, num_classes: int) -> np.ndarray:
    return np.zeros(feature_dim * num_classes + num_classes)


def _unpack(params: np.ndarray, feature_dim: int, num_classes: int):
    expected = feature_dim * num_classes + num_classes
    if params.shape != (expected,):
        raise ShapeError(f"model has {params.size} entries, expected {expected}")
    return params[: feature_dim * num_classes].reshape(feature_dim, num_classes), params[feature_dim * num_classes:]


def softmax_loss_and_grad(params: np.ndarray, X: np.ndarray, y: np.ndarray, num_classes: int) -> Tuple[float, np.ndarray]:
    """
    Mean cross-entropy of a softmax-regression model and its gradient

    Args:
        params: Flat model vector
        X: (n x D) features
        y: n integer labels in [0, num_classes)
        num_classes: Number of classes

    Returns:
        (loss, gradient) with the gradient shaped like ``params``
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    n = y.size
    if n == 0:
        raise DomainError("loss of an empty batch is undefined")
    W, bias = _unpack(np.asarray(params, dtype=float), X.shape[1], num_classes)
    log_probs = log_softmax(X @ W + bias, axis=1)
    rows = np.arange(n)
    loss = -float(np.mean(log_probs[rows, y]))
    delta = np.exp(log_probs)
    delta[rows, y] -= 1.0
    delta /= n
    return loss, np.concatenate([(X.T @ delta).reshape(-1), delta.sum(axis=0)])


def local_update(
    params: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    learning_rate: float,
    epochs: int,
    batch_size: int,
    rng: np.random.Generator,
    num_classes: int,
) -> np.ndarray:
    """
    E mini-batch gradient steps on one client's data

    Each step draws ``batch_size`` distinct samples uniformly and moves by
    ``-learning_rate`` times their mean gradient.
    """
    n = np.asarray(y).size
    if n == 0:
        raise DomainError("client holds no samples")
    if batch_size < 1 or batch_size > n:
        raise DomainError(f"batch size {batch_size} outside [1, {n}]")
    if learning_rate < 0:
        raise DomainError("learning rate must be nonnegative")
    w = np.array(params, dtype=float)
    for _ in range(epochs):
        batch = rng.choice(n, size=batch_size, replace=False)
        _, grad = softmax_loss_and_grad(w, X[batch], y[batch], num_classes)
        w -= learning_rate * grad
    return w


def aggregate(models: Sequence[np.ndarray], sizes: Sequence[float]) -> np.ndarray:
    """Weighted average with weights d_k / sum of participant sizes"""
    if len(models) == 0:
        raise DomainError("aggregation needs at least one model")
    if len(models) != len(sizes):
        raise ShapeError("one size per model is required")
    stacked = [np.asarray(m, dtype=float) for m in models]
    shape = stacked[0].shape
    if any(m.shape != shape for m in stacked):
        raise ShapeError("models have different dimensions")
    weights = np.asarray(sizes, dtype=float)
    if np.any(weights < 0) or weights.sum() <= 0:
        raise DomainError("participant sizes must be nonnegative with a positive total")
    weights = weights / weights.sum()
    return np.tensordot(weights, np.stack(stacked), axes=1)


def evaluate(params: np.ndarray, X: np.ndarray, y: np.ndarray, num_classes: int) -> Tuple[float, float]:
    """(top-1 accuracy, mean cross-entropy)"""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if y.size == 0:
        raise DomainError("test set is empty")
    W, bias = _unpack(np.asarray(params, dtype=float), X.shape[1], num_classes)
    log_probs = log_softmax(X @ W + bias, axis=1)
    accuracy = float(np.mean(np.argmax(log_probs, axis=1) == y))
    return accuracy, -float(np.mean(log_probs[np.arange(y.size), y]))


def local_losses(params: np.ndarray, task: LearningTask) -> np.ndarray:
    """Loss of the model on every client's shard; NaN for empty clients"""
    out: List[float] = []
    for k in range(task.num_clients):
        X, y = task.client_data(k)
        out.append(evaluate(params, X, y, task.num_classes)[1] if y.size else float("nan"))
    return np.array(out)
