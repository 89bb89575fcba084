"""Synthetic two-class population and Dirichlet label-skew partitioning."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InfeasiblePartition
from .model import DatasetShard


@dataclass(frozen=True)
class PopulationSpec:
    n_total: int = 2000
    d: int = 10
    class_sep: float = 6.0
    positive_frac: float = 0.5

    def __post_init__(self):
        if self.n_total < 1:
            raise ValueError("n_total must be positive")
        if self.d < 1:
            raise ValueError("d must be positive")
        if not self.class_sep > 0:
            raise ValueError("class_sep must be positive")
        if not 0 < self.positive_frac < 1:
            raise ValueError("positive_frac must lie in (0, 1)")


@dataclass(frozen=True)
class PartitionSpec:
    n_clients: int = 10
    dirichlet_alpha: float = 1.0
    min_shard: int = 2

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError("n_clients must be >= 1")
        if not self.dirichlet_alpha > 0:
            raise ValueError("dirichlet_alpha must be positive")
        if self.min_shard < 0:
            raise ValueError("min_shard must be >= 0")


def generate_population(spec: PopulationSpec, seed) -> DatasetShard:
    """Draw labels ~ Bernoulli(positive_frac) and features ~ N(+-class_sep/2 * e1, I)."""
    rng = np.random.default_rng(seed)
    labels = (rng.random(spec.n_total) < spec.positive_frac).astype(np.int64)
    features = rng.standard_normal((spec.n_total, spec.d))
    features[:, 0] += np.where(labels == 1, 0.5, -0.5) * spec.class_sep
    return DatasetShard(features, labels)


def partition_indices(labels: np.ndarray, part: PartitionSpec, seed) -> list[np.ndarray]:
    """Assign record indices to clients with Dirichlet(alpha) class proportions.

    Every index lands in exactly one client. Clients short of ``min_shard``
    records are topped up from whichever client is currently largest.
    """
    labels = np.asarray(labels)
    n, k = labels.shape[0], part.n_clients
    if n == 0:
        raise InfeasiblePartition("cannot partition an empty dataset")
    if k > n:
        raise InfeasiblePartition(f"{k} clients but only {n} records")
    if k * part.min_shard > n:
        raise InfeasiblePartition(f"{k} clients x min_shard {part.min_shard} exceeds {n} records")
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(k)]
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        props = rng.dirichlet(np.full(k, part.dirichlet_alpha))
        cuts = np.round(np.cumsum(props)[:-1] * idx.size).astype(int)
        for client, chunk in enumerate(np.split(idx, cuts)):
            buckets[client].extend(chunk.tolist())
    for client in range(k):
        while len(buckets[client]) < part.min_shard:
            donor = max(range(k), key=lambda c: (len(buckets[c]), -c))
            buckets[client].append(buckets[donor].pop())
    return [np.array(sorted(b), dtype=np.int64) for b in buckets]


def partition_non_iid(data: DatasetShard, part: PartitionSpec, seed) -> list[DatasetShard]:
    return [data.subset(idx) for idx in partition_indices(data.labels, part, seed)]


def write_csv(shard: DatasetShard, path) -> None:
    """Write ``f0,...,f{d-1},label`` rows with 9 significant digits."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(shard.n_features)] + ["label"])
        for row, y in zip(shard.features, shard.labels):
            w.writerow([f"{v:.9g}" for v in row] + [int(y)])


def read_csv(path) -> DatasetShard:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    body = np.array(rows[1:], dtype=np.float64).reshape(-1, len(rows[0]))
    return DatasetShard(body[:, :-1], body[:, -1].astype(np.int64))
