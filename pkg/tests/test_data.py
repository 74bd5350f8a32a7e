import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedravan import data
from fedravan import model as mdl
from fedravan.linalg import make_stream


def test_synthetic_counts_and_determinism():
    a = data.make_synthetic(5, 8, 30, 2.0, make_stream(1, "d"))
    b = data.make_synthetic(5, 8, 30, 2.0, make_stream(1, "d"))
    assert np.array_equal(np.bincount(a.labels), [30] * 5)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)
    with pytest.raises(ValueError):
        data.make_synthetic(0, 8, 30, 2.0, make_stream(1))


def test_well_separated_task_is_learnable():
    ds = data.make_synthetic(4, 64, 100, 10.0, make_stream(0, "sep"))
    model = mdl.build_toy_model(64, 4, make_stream(0, "lin"), n_layers=1, full_ft=True)
    mdl.train_steps(model, ds.features, ds.labels, 200, mdl.AdamState(1e-2), make_stream(0, "b"))
    assert mdl.evaluate(model, ds.features, ds.labels)[1] > 0.99


def test_shifted_task_moves_centers():
    task = data.make_shifted_task(4, 10, 20, 5, 2.0, 3.0, make_stream(0, "s"))
    shift = np.linalg.norm(task.train.centers - task.source.centers, axis=0)
    assert np.allclose(shift, 3.0)
    assert task.test.n == 20 and task.train.n == 80
    same = data.make_shifted_task(4, 10, 20, 5, 2.0, 0.0, make_stream(0, "s"))
    assert np.array_equal(same.train.centers, same.source.centers)


def _check_cover(ds, shards):
    joined = np.concatenate(shards)
    assert len(joined) == ds.n and np.array_equal(np.sort(joined), np.arange(ds.n))


def test_partition_single_client_and_iid_sizes():
    ds = data.make_synthetic(10, 4, 1000, 1.0, make_stream(0))
    [only] = data.partition(ds, data.PartitionSpec(1, "dirichlet", 0.3))
    assert np.array_equal(only, np.arange(ds.n))
    shards = data.partition(ds, data.PartitionSpec(20, "iid"))
    assert [len(s) for s in shards] == [500] * 20
    _check_cover(ds, shards)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 10), st.floats(0.3, 50), st.integers(0, 1000))
def test_dirichlet_partition_is_disjoint_and_exhaustive(n_clients, alpha, seed):
    ds = data.make_synthetic(4, 3, 50, 1.0, make_stream(seed, "p"))
    shards = data.partition(ds, data.PartitionSpec(n_clients, "dirichlet", alpha, seed))
    _check_cover(ds, shards)
    assert min(len(s) for s in shards) >= 1


def test_partition_deterministic_per_seed():
    ds = data.make_synthetic(5, 3, 40, 1.0, make_stream(0))
    a = data.partition(ds, data.PartitionSpec(6, "dirichlet", 0.3, seed=4))
    b = data.partition(ds, data.PartitionSpec(6, "dirichlet", 0.3, seed=4))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_small_alpha_is_more_skewed():
    low, high = [], []
    for seed in range(10):
        ds = data.make_synthetic(10, 3, 100, 1.0, make_stream(seed))
        low.append(data.mean_label_entropy(ds, data.partition(ds, data.PartitionSpec(20, "dirichlet", 0.3, seed))))
        high.append(data.mean_label_entropy(ds, data.partition(ds, data.PartitionSpec(20, "dirichlet", 100.0, seed))))
    assert np.mean(low) < np.mean(high)


def test_partition_errors():
    ds = data.make_synthetic(2, 3, 2, 1.0, make_stream(0))
    with pytest.raises(ValueError):
        data.partition(ds, data.PartitionSpec(5, "iid"))
    with pytest.raises(ValueError):
        data.partition(ds, data.PartitionSpec(4, "dirichlet", 0.01, min_size=2))
    with pytest.raises(ValueError):
        data.PartitionSpec(2, "weird")


def test_tv_distance_zero_for_identical_mixes():
    ds = data.Dataset(np.zeros((1, 4)), np.array([0, 1, 0, 1]), 2)
    assert data.mean_tv_distance(ds, [np.array([0, 1]), np.array([2, 3])]) == 0.0
    assert data.mean_tv_distance(ds, [np.array([0, 2]), np.array([1, 3])]) == 0.5


def test_load_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f1,label,f2\n0.5,1,2\n-1,0,3\n")
    ds = data.load_csv(p)
    assert np.array_equal(ds.features, [[0.5, -1.0], [2.0, 3.0]])
    assert np.array_equal(ds.labels, [1, 0]) and ds.n_classes == 2
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        data.load_csv(tmp_path / "bad.csv")


def test_dataset_validation():
    with pytest.raises(ValueError):
        data.Dataset(np.zeros((2, 3)), np.array([0, 1]), 2)
    with pytest.raises(ValueError):
        data.Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)
