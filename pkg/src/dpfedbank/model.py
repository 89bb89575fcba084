"""L2-regularised logistic regression and client-side local SGD.

Parameter vectors are plain 1-D float64 numpy arrays. When the model has an
intercept, the bias is the last coordinate and shards carry one feature fewer
than the parameter dimension.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyBatch, EmptyShard


@dataclass(frozen=True)
class ModelSpec:
    dimension: int
    l2_lambda: float = 0.0
    intercept: bool = False

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")

    @classmethod
    def for_features(cls, n_features: int, l2_lambda: float = 0.0, intercept: bool = True) -> "ModelSpec":
        return cls(n_features + int(intercept), l2_lambda, intercept)

    @property
    def n_features(self) -> int:
        return self.dimension - int(self.intercept)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    local_epochs: int = 1
    batch_size: int = 16

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.local_epochs < 0:
            raise ValueError("local_epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True, eq=False)
class DatasetShard:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"features {x.shape} do not match labels {y.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("features must be finite")
        if np.any((y != 0) & (y != 1)):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "DatasetShard":
        return DatasetShard(self.features[idx], self.labels[idx])

    def __eq__(self, other):
        if not isinstance(other, DatasetShard):
            return NotImplemented
        return np.array_equal(self.features, other.features) and np.array_equal(self.labels, other.labels)


def init_params(spec: ModelSpec) -> np.ndarray:
    return np.zeros(spec.dimension)


def _design(features: np.ndarray, spec: ModelSpec) -> np.ndarray:
    if features.shape[1] != spec.n_features:
        raise DimensionMismatch(f"expected {spec.n_features} features, got {features.shape[1]}")
    if spec.intercept:
        return np.hstack([features, np.ones((features.shape[0], 1))])
    return features


def _check_params(params: np.ndarray, spec: ModelSpec) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.dimension,):
        raise DimensionMismatch(f"expected parameters of length {spec.dimension}, got {params.shape}")
    return params


def loss_and_grad(params: np.ndarray, batch: DatasetShard, spec: ModelSpec) -> tuple[float, np.ndarray]:
    """Mean log-loss plus ``(lambda/2)*||params||^2`` and its exact gradient."""
    if len(batch) == 0:
        raise EmptyBatch("batch is empty")
    params = _check_params(params, spec)
    x = _design(batch.features, spec)
    y = batch.labels
    z = x @ params
    # log(1 + e^z) - y*z, evaluated without overflow
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) + 0.5 * spec.l2_lambda * float(params @ params)
    p = _sigmoid(z)
    grad = x.T @ (p - y) / len(y) + spec.l2_lambda * params
    return loss, grad


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def local_train(
    global_params: np.ndarray,
    shard: DatasetShard,
    cfg: TrainConfig,
    spec: ModelSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """Run ``cfg.local_epochs`` epochs of mini-batch SGD from the global model.

    Each epoch shuffles the shard with ``rng`` and keeps the final partial
    batch. Returns the update delta ``local - global``.
    """
    if len(shard) == 0:
        raise EmptyShard("cannot train on an empty shard")
    start = _check_params(global_params, spec)
    theta = start.copy()
    n = len(shard)
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            _, g = loss_and_grad(theta, shard.subset(order[lo:lo + cfg.batch_size]), spec)
            theta -= cfg.learning_rate * g
    return theta - start


def evaluate(params: np.ndarray, shard: DatasetShard, spec: ModelSpec) -> tuple[float, float]:
    """Return (accuracy, loss); a score of exactly 0.5 predicts the positive class."""
    if len(shard) == 0:
        raise EmptyShard("cannot evaluate on an empty shard")
    params = _check_params(params, spec)
    z = _design(shard.features, spec) @ params
    pred = (z >= 0).astype(np.int64)
    acc = float(np.mean(pred == shard.labels))
    loss, _ = loss_and_grad(params, shard, spec)
    return acc, loss
