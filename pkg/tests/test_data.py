import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpfedbank.data import (
    PartitionSpec,
    PopulationSpec,
    generate_population,
    partition_indices,
    partition_non_iid,
    read_csv,
    write_csv,
)
from dpfedbank.errors import InfeasiblePartition
from dpfedbank.model import ModelSpec, TrainConfig, evaluate, init_params, local_train


def test_well_separated_population_is_learnable():
    data = generate_population(PopulationSpec(1000, 5, class_sep=10.0), 0)
    spec = ModelSpec.for_features(5)
    theta = init_params(spec)
    theta += local_train(theta, data, TrainConfig(0.1, 5, 32), spec, np.random.default_rng(0))
    assert evaluate(theta, data, spec)[0] >= 0.99


def test_positive_fraction_concentrates():
    data = generate_population(PopulationSpec(10_000, 2, positive_frac=0.5), 42)
    assert 0.47 <= data.labels.mean() <= 0.53


def test_population_deterministic():
    a = generate_population(PopulationSpec(100, 3), 9)
    b = generate_population(PopulationSpec(100, 3), 9)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


def test_large_alpha_is_nearly_iid():
    data = generate_population(PopulationSpec(4000, 2), 1)
    shards = partition_non_iid(data, PartitionSpec(4, 1e6), 1)
    overall = data.labels.mean()
    for s in shards:
        assert abs(s.labels.mean() - overall) <= 0.05


def spread(alpha, seed, n_clients=10):
    data = generate_population(PopulationSpec(2000, 2), seed)
    fr = [s.labels.mean() for s in partition_non_iid(data, PartitionSpec(n_clients, alpha), seed)]
    return max(fr) - min(fr)


def test_small_alpha_more_heterogeneous():
    small = np.mean([spread(0.1, s) for s in range(10)])
    large = np.mean([spread(1e6, s) for s in range(10)])
    assert small > large


def label_tv(alpha, seed):
    """Mean pairwise total-variation distance between client label distributions."""
    data = generate_population(PopulationSpec(2000, 2), seed)
    fr = np.array([s.labels.mean() for s in partition_non_iid(data, PartitionSpec(10, alpha), seed)])
    return np.mean(np.abs(fr[:, None] - fr[None, :]))


def test_heterogeneity_decreases_with_alpha():
    tv = [np.mean([label_tv(a, s) for s in range(10)]) for a in (0.1, 1.0, 100.0)]
    assert tv[0] > tv[1] > tv[2]


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(20, 300),
    k=st.integers(1, 10),
    alpha=st.floats(0.05, 100.0),
    seed=st.integers(0, 2**32 - 1),
)
def test_partition_conserves_records(n, k, alpha, seed):
    labels = np.random.default_rng(seed).integers(0, 2, n)
    parts = partition_indices(labels, PartitionSpec(k, alpha, 2), seed)
    assert len(parts) == k
    joined = np.concatenate(parts)
    assert sorted(joined.tolist()) == list(range(n))
    assert all(len(p) >= 2 for p in parts)


def test_partition_deterministic_and_infeasible():
    labels = np.arange(50) % 2
    a = partition_indices(labels, PartitionSpec(5, 0.5), 3)
    b = partition_indices(labels, PartitionSpec(5, 0.5), 3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    with pytest.raises(InfeasiblePartition):
        partition_indices(labels, PartitionSpec(51, 1.0, 0), 0)
    with pytest.raises(InfeasiblePartition):
        partition_indices(labels, PartitionSpec(30, 1.0, 2), 0)


def test_csv_roundtrip(tmp_path):
    data = generate_population(PopulationSpec(20, 3), 0)
    path = tmp_path / "shard.csv"
    write_csv(data, path)
    assert path.read_text().splitlines()[0] == "f0,f1,f2,label"
    back = read_csv(path)
    np.testing.assert_allclose(back.features, data.features, rtol=1e-8)
    assert np.array_equal(back.labels, data.labels)
