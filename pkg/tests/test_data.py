"""Synthetic data, partitioning, splitting, CSV ingestion."""

import numpy as np
import pytest

from csfl.data import (
    CsvFormatError,
    Dataset,
    generate_synthetic,
    load_csv,
    partition_dirichlet,
    save_csv,
    train_test_split,
)
from csfl.metrics import evaluate
from csfl.nn import Architecture, Hyperparams, init_random, loss_and_grads, optimizer_step


def test_synthetic_shapes_and_determinism():
    ds = generate_synthetic(classes=3, dim=16, per_class=50, separation=6.0, seed=9)
    assert ds.inputs.shape == (150, 16)
    assert ds.inputs.dtype == np.float32
    assert ds.labels.shape == (150,)
    assert [int((ds.labels == c).sum()) for c in range(3)] == [50, 50, 50]
    again = generate_synthetic(classes=3, dim=16, per_class=50, separation=6.0, seed=9)
    assert np.array_equal(ds.inputs, again.inputs)
    other = generate_synthetic(classes=3, dim=16, per_class=50, separation=6.0, seed=10)
    assert not np.array_equal(ds.inputs, other.inputs)


def test_synthetic_means_on_separation_sphere():
    ds = generate_synthetic(classes=4, dim=8, per_class=2000, separation=5.0, seed=1)
    for c in range(4):
        centroid = ds.inputs[ds.labels == c].mean(axis=0)
        # empirical mean of 2000 unit-variance points lands within ~3/sqrt(2000)
        assert abs(np.linalg.norm(centroid) - 5.0) < 0.3


def test_synthetic_is_separable_within_200_steps():
    # separation 6 at dim 16 admits >= 95% accuracy quickly
    ds = generate_synthetic(classes=3, dim=16, per_class=200, separation=6.0, seed=0)
    train, test = train_test_split(ds, 0.8, seed=0)
    arch = Architecture(16, (32,), 3)
    hp = Hyperparams(optimizer="adam", learning_rate=0.01, batch_size=64)
    params = init_random(arch, seed=0)
    state = None
    steps = 0
    while steps < 200:
        for start in range(0, len(train), hp.batch_size):
            if steps >= 200:
                break
            _, grads = loss_and_grads(
                params,
                train.inputs[start : start + hp.batch_size],
                train.labels[start : start + hp.batch_size],
            )
            params, state = optimizer_step(params, grads, hp, state)
            steps += 1
    acc, _ = evaluate(params, test)
    assert acc >= 0.95


def test_synthetic_rejects_bad_args():
    with pytest.raises(ValueError):
        generate_synthetic(1, 4, 10, 1.0, 0)
    with pytest.raises(ValueError):
        generate_synthetic(3, 0, 10, 1.0, 0)


def test_split_fraction_and_stratification():
    ds = generate_synthetic(classes=4, dim=4, per_class=25, separation=2.0, seed=3)
    train, test = train_test_split(ds, 0.8, seed=3)
    assert len(train) == 80 and len(test) == 20
    for c in range(4):
        assert int((train.labels == c).sum()) == 20
        assert int((test.labels == c).sum()) == 5


def test_split_is_disjoint_and_covers():
    ds = generate_synthetic(classes=3, dim=5, per_class=40, separation=2.0, seed=4)
    train, test = train_test_split(ds, 0.7, seed=4)
    assert len(train) + len(test) == len(ds)
    rows = {tuple(r) for r in np.concatenate([train.inputs, test.inputs])}
    assert len(rows) == len(ds)


def test_split_rejects_tiny_class_and_bad_fraction():
    ds = Dataset(np.zeros((3, 2), dtype=np.float32), np.array([0, 0, 1]), 2)
    with pytest.raises(ValueError):
        train_test_split(ds, 0.5, seed=0)  # class 1 has a single sample
    ok = Dataset(np.zeros((4, 2), dtype=np.float32), np.array([0, 0, 1, 1]), 2)
    with pytest.raises(ValueError):
        train_test_split(ok, 1.0, seed=0)


def test_dirichlet_partition_covers_and_respects_minimum():
    ds = generate_synthetic(classes=3, dim=4, per_class=200, separation=2.0, seed=5)
    shards = partition_dirichlet(ds, n_clients=12, alpha=0.5, min_per_client=10, seed=5)
    assert len(shards) == 12
    assert sum(len(s) for s in shards) == len(ds)
    assert min(len(s) for s in shards) >= 10
    again = partition_dirichlet(ds, n_clients=12, alpha=0.5, min_per_client=10, seed=5)
    for a, b in zip(shards, again):
        assert np.array_equal(a.inputs, b.inputs)


def test_dirichlet_low_alpha_skews_labels():
    # with alpha 0.1 nearly every draw leaves some client dominated by one class
    hits = 0
    for seed in range(20):
        ds = generate_synthetic(classes=3, dim=4, per_class=200, separation=2.0, seed=seed)
        shards = partition_dirichlet(ds, n_clients=10, alpha=0.1, min_per_client=1, seed=seed)
        for shard in shards:
            counts = np.bincount(shard.labels, minlength=3)
            if counts.max() / counts.sum() > 0.6:
                hits += 1
                break
    assert hits >= 15


def test_dirichlet_infeasible_minimum_raises():
    ds = generate_synthetic(classes=3, dim=4, per_class=10, separation=2.0, seed=6)
    with pytest.raises(ValueError):
        partition_dirichlet(ds, n_clients=5, alpha=0.5, min_per_client=7, seed=6)
    # feasible on paper but hopeless under an extreme skew: attempts run out
    with pytest.raises(ValueError):
        partition_dirichlet(ds, 10, alpha=0.001, min_per_client=3, seed=6, max_attempts=3)


def test_csv_round_trip_is_exact(tmp_path):
    ds = generate_synthetic(classes=3, dim=6, per_class=20, separation=3.0, seed=7)
    path = tmp_path / "data.csv"
    save_csv(ds, path)
    back = load_csv(path)
    assert np.array_equal(ds.inputs, back.inputs)
    assert np.array_equal(ds.labels, back.labels)
    assert back.class_count == 3


def test_csv_missing_file_and_format_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "nope.csv")

    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(CsvFormatError):
        load_csv(p)

    p = tmp_path / "nolabel.csv"
    p.write_text("x0,x1\n1,2\n")
    with pytest.raises(CsvFormatError, match="label"):
        load_csv(p)

    p = tmp_path / "badcell.csv"
    p.write_text("x0,x1,label\n1.0,oops,0\n")
    with pytest.raises(CsvFormatError, match=r"row 2.*x1"):
        load_csv(p)

    p = tmp_path / "badlabel.csv"
    p.write_text("x0,label\n1.0,zero\n")
    with pytest.raises(CsvFormatError, match=r"row 2.*label"):
        load_csv(p)

    p = tmp_path / "ragged.csv"
    p.write_text("x0,x1,label\n1.0,2.0,0\n1.0,1\n")
    with pytest.raises(CsvFormatError, match="row 3"):
        load_csv(p)

    p = tmp_path / "norows.csv"
    p.write_text("x0,label\n")
    with pytest.raises(CsvFormatError, match="no data rows"):
        load_csv(p)


def test_csv_custom_label_column(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,target,b\n0.5,1,2.5\n1.5,0,3.5\n")
    ds = load_csv(p, label_column="target")
    assert ds.labels.tolist() == [1, 0]
    assert ds.inputs.shape == (2, 2)
    assert ds.inputs[0].tolist() == [0.5, 2.5]
