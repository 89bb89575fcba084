"""Adversarial client and transport behaviours."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .model import DatasetShard

NONE = "none"
LABEL_FLIP = "label_flip"
DATA_POISON = "data_poison"
SCALE_UPDATE = "scale_update"
RANDOM_UPDATE = "random_update"

DATA_ATTACKS = (LABEL_FLIP, DATA_POISON)
UPDATE_ATTACKS = (SCALE_UPDATE, RANDOM_UPDATE)


@dataclass(frozen=True)
class AttackSpec:
    """What the attacking clients do.

    ``frac`` is the share of an attacker's records that label-flip and
    data-poison attacks touch. ``attackers`` lists the malicious client ids.
    """

    kind: str = NONE
    attackers: frozenset = frozenset()
    frac: float = 0.0
    target_shift: tuple = ()
    factor: float = 1.0
    sigma_a: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "attackers", frozenset(self.attackers))
        object.__setattr__(self, "target_shift", tuple(float(v) for v in self.target_shift))
        if self.kind not in (NONE, *DATA_ATTACKS, *UPDATE_ATTACKS):
            raise ValueError(f"kind must be one of {', '.join((NONE, *DATA_ATTACKS, *UPDATE_ATTACKS))}")
        if not 0 <= self.frac <= 1:
            raise ValueError("frac must lie in [0, 1]")
        if not self.sigma_a > 0:
            raise ValueError("sigma_a must be positive")

    def is_attacker(self, client_id) -> bool:
        return self.kind != NONE and client_id in self.attackers


@dataclass(frozen=True)
class TransportAdversary:
    """Channel-level interference applied to envelopes in flight.

    ``tamper_index``/``tamper_byte`` overwrite one payload byte without
    touching the digest or tag. ``forge`` recomputes the digest and signs with
    the adversary's own key. ``targets`` limits interference to some clients;
    None means every client.
    """

    drop_prob: float = 0.0
    tamper_index: int | None = None
    tamper_byte: int = 0
    replay: bool = False
    forge: bool = False
    targets: frozenset | None = None

    def __post_init__(self):
        if self.targets is not None:
            object.__setattr__(self, "targets", frozenset(self.targets))
        if not 0 <= self.drop_prob <= 1:
            raise ValueError("drop_prob must lie in [0, 1]")
        if self.tamper_index is not None and self.tamper_index < 0:
            raise ValueError("tamper_index must be >= 0")
        if not 0 <= self.tamper_byte <= 255:
            raise ValueError("tamper_byte must be a byte value")

    def applies_to(self, client_id) -> bool:
        return self.targets is None or client_id in self.targets

    @property
    def passive(self) -> bool:
        return self.drop_prob == 0 and self.tamper_index is None and not self.replay and not self.forge


def _pick(n: int, frac: float, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(n, size=int(np.floor(frac * n)), replace=False)


def flip_labels(shard: DatasetShard, frac: float, rng: np.random.Generator) -> DatasetShard:
    if not 0 <= frac <= 1:
        raise ValueError("frac must lie in [0, 1]")
    labels = shard.labels.copy()
    idx = _pick(len(shard), frac, rng)
    labels[idx] = 1 - labels[idx]
    return DatasetShard(shard.features.copy(), labels)


def poison_data(shard: DatasetShard, frac: float, target_shift, rng: np.random.Generator) -> DatasetShard:
    """Shift a ``frac`` share of rows by ``target_shift`` and force their label to 1."""
    if not 0 <= frac <= 1:
        raise ValueError("frac must lie in [0, 1]")
    shift = np.asarray(target_shift, dtype=np.float64)
    if shift.shape != (shard.n_features,):
        raise DimensionMismatch(f"shift has shape {shift.shape}, shard has {shard.n_features} features")
    features = shard.features.copy()
    labels = shard.labels.copy()
    idx = _pick(len(shard), frac, rng)
    features[idx] += shift
    labels[idx] = 1
    return DatasetShard(features, labels)


def scale_update(delta: np.ndarray, factor: float) -> np.ndarray:
    return np.asarray(delta, dtype=np.float64) * factor


def random_update(d: int, sigma_a: float, rng: np.random.Generator) -> np.ndarray:
    if d < 1:
        raise ValueError("d must be >= 1")
    return rng.normal(0.0, sigma_a, size=d)


def attack_shard(shard: DatasetShard, spec: AttackSpec, rng: np.random.Generator) -> DatasetShard:
    """Apply the data-level part of ``spec`` to an attacker's shard."""
    if spec.kind == LABEL_FLIP:
        return flip_labels(shard, spec.frac, rng)
    if spec.kind == DATA_POISON:
        shift = spec.target_shift or (0.0,) * shard.n_features
        return poison_data(shard, spec.frac, shift, rng)
    return shard
