import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpfedbank.attacks import AttackSpec, TransportAdversary, flip_labels, poison_data, random_update, scale_update
from dpfedbank.errors import DimensionMismatch
from dpfedbank.model import DatasetShard


def shard(n=100, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return DatasetShard(rng.normal(size=(n, d)), rng.integers(0, 2, n))


def rng(seed=0):
    return np.random.default_rng(seed)


def test_flip_labels_counts_and_involution():
    s = shard()
    assert flip_labels(s, 0.0, rng()) == s
    flipped = flip_labels(s, 1.0, rng())
    assert np.array_equal(flipped.labels, 1 - s.labels)
    assert flip_labels(flipped, 1.0, rng(1)) == s
    half = flip_labels(s, 0.5, rng())
    assert np.count_nonzero(half.labels != s.labels) == 50
    assert np.array_equal(half.features, s.features)


def test_poison_data():
    s = shard(10)
    assert poison_data(s, 0.0, np.ones(3), rng()) == s
    p = poison_data(s, 1.0, np.zeros(3), rng())
    assert np.array_equal(p.features, s.features) and np.all(p.labels == 1)
    p = poison_data(s, 0.3, np.full(3, 5.0), rng())
    assert np.count_nonzero(np.any(p.features != s.features, axis=1)) == 3
    with pytest.raises(DimensionMismatch):
        poison_data(s, 0.3, np.ones(2), rng())


def test_scale_update():
    v = np.array([1.0, -2.0])
    assert np.array_equal(scale_update(v, 1), v)
    assert np.array_equal(scale_update(v, 0), [0, 0])
    assert np.array_equal(scale_update(v, 50), [50, -100])


def test_random_update():
    assert np.all(np.abs(random_update(5, 1e-15, rng())) < 1e-12)
    assert 0.97 <= random_update(10_000, 1.0, rng()).std() <= 1.03
    assert np.array_equal(random_update(4, 2.0, rng(3)), random_update(4, 2.0, rng(3)))


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_attacks_deterministic_and_shape_preserving(frac, seed):
    s = shard(37, 4, seed % 1000)
    for out_a, out_b in [
        (flip_labels(s, frac, rng(seed)), flip_labels(s, frac, rng(seed))),
        (poison_data(s, frac, np.ones(4), rng(seed)), poison_data(s, frac, np.ones(4), rng(seed))),
    ]:
        assert out_a == out_b
        assert out_a.features.shape == s.features.shape and out_a.labels.shape == s.labels.shape


def test_spec_validation():
    with pytest.raises(ValueError):
        AttackSpec("label_flip", frac=1.5)
    with pytest.raises(ValueError):
        AttackSpec("teleport")
    with pytest.raises(ValueError):
        TransportAdversary(drop_prob=2)
    assert AttackSpec("scale_update", {1}).is_attacker(1)
    assert not AttackSpec("none", {1}).is_attacker(1)
