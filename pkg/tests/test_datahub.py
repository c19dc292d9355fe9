import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from classil import datahub, neuralnet
from classil.errors import ConfigError, DataFormatError, IntegrityError


def test_csv_readback(tmp_path):
    path = tmp_path / "tiny.csv"
    path.write_text("f0,f1,label\n0.5,1.5,0\n-1.0,2.0,1\n0.25,0.125,0\n3.0,-4.0,1\n")
    ds = datahub.load_dataset(path, "csv")
    assert ds.num_samples == 4
    assert ds.dim == 2
    assert set(ds.class_ids().tolist()) == {0, 1}
    assert ds.features[1, 0] == -1.0
    assert ds.labels.tolist() == [0, 1, 0, 1]


def test_csv_bad_feature_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("f0,f1,label\n0.5,1.5,0\nhello,2.0,1\n")
    with pytest.raises(DataFormatError, match="line 3"):
        datahub.load_dataset(path, "csv")


def test_csv_wrong_column_count_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("f0,f1,label\n0.5,1.5,0\n1.0,1\n")
    with pytest.raises(DataFormatError, match="line 3"):
        datahub.load_dataset(path, "csv")


def test_csv_empty_and_header_only(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(DataFormatError):
        datahub.load_dataset(empty, "csv")
    header_only = tmp_path / "h.csv"
    header_only.write_text("f0,f1,label\n")
    with pytest.raises(DataFormatError, match="no data rows"):
        datahub.load_dataset(header_only, "csv")


def test_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,0\n")
    with pytest.raises(DataFormatError, match="header"):
        datahub.load_dataset(path, "csv")


@pytest.mark.parametrize("fmt", ["csv", "packed"])
def test_round_trip_bitwise(tmp_path, fmt):
    ds = datahub.generate_synthetic(3, 5, 4, 0.2, seed=11)
    ext = "csv" if fmt == "csv" else "bin"
    path = tmp_path / f"rt.{ext}"
    datahub.save_dataset(ds, path, fmt=fmt)
    back = datahub.load_dataset(path, fmt)
    assert np.array_equal(ds.features, back.features)
    assert np.array_equal(ds.labels, back.labels)


def test_packed_rejects_corruption(tmp_path):
    ds = datahub.generate_synthetic(2, 3, 4, 0.2, seed=3)
    path = tmp_path / "d.bin"
    datahub.save_dataset(ds, path, fmt="packed")
    blob = bytearray(path.read_bytes())
    blob[0] = 0  # magic
    path.write_bytes(bytes(blob))
    with pytest.raises(DataFormatError, match="magic"):
        datahub.load_dataset(path, "packed")
    datahub.save_dataset(ds, path, fmt="packed")
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(DataFormatError):
        datahub.load_dataset(path, "packed")


def test_dataset_validation():
    with pytest.raises(DataFormatError, match="NaN"):
        datahub.LabeledFeatureSet(np.array([[np.nan, 1.0]]), np.array([0]))
    with pytest.raises(DataFormatError):
        datahub.LabeledFeatureSet(np.ones((2, 2)), np.array([0]))
    with pytest.raises(DataFormatError, match="non-negative"):
        datahub.LabeledFeatureSet(np.ones((1, 2)), np.array([-1]))
    with pytest.raises(DataFormatError, match="empty"):
        datahub.LabeledFeatureSet(np.ones((0, 2)), np.array([], dtype=int))


def test_train_test_consistency():
    train = datahub.LabeledFeatureSet(np.ones((2, 2)), np.array([0, 1]), split="train")
    test = datahub.LabeledFeatureSet(np.ones((1, 2)), np.array([2]), split="test")
    with pytest.raises(DataFormatError, match="never appear"):
        datahub.check_train_test_consistency(train, test)


def test_generate_counts_and_determinism():
    a = datahub.generate_synthetic(2, 10, 2, 0.1, seed=7)
    assert a.num_samples == 20
    assert set(a.class_ids().tolist()) == {0, 1}
    b = datahub.generate_synthetic(2, 10, 2, 0.1, seed=7)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)


def test_generate_argument_errors():
    with pytest.raises(ConfigError):
        datahub.generate_synthetic(1, 10, 2, 0.1, seed=7)
    with pytest.raises(ConfigError):
        datahub.generate_synthetic(2, 0, 2, 0.1, seed=7)
    with pytest.raises(ConfigError):
        datahub.generate_synthetic(2, 10, 1, 0.1, seed=7)
    with pytest.raises(ConfigError):
        datahub.generate_synthetic(2, 10, 2, 0.0, seed=7)


def test_generate_splits_share_means():
    train = datahub.generate_synthetic(4, 50, 8, 0.05, seed=5, split="train")
    test = datahub.generate_synthetic(4, 50, 8, 0.05, seed=5, split="test")
    assert not np.array_equal(train.features, test.features)
    for c in range(4):
        mu_train = train.features[train.labels == c].mean(axis=0)
        mu_test = test.features[test.labels == c].mean(axis=0)
        assert np.linalg.norm(mu_train - mu_test) < 0.1


def test_tight_clusters_linearly_separable():
    # independent oracle for the generator: a plain linear head must fit it
    ds = datahub.generate_synthetic(20, 30, 8, 0.01, seed=13)
    model = neuralnet.init_model(8, [], 20, seed=0)
    spec = neuralnet.TrainSpec(epochs=30, batch_size=32, base_lr=0.5, weight_decay=0.0,
                               plateau_patience=1000, seed=0)
    view = datahub.TrainingView(ds.features, ds.labels)
    trained, _ = neuralnet.train_state(model, view, spec)
    _, logits = neuralnet.forward(trained, ds.features)
    acc = np.mean(np.argmax(logits, axis=1) == ds.labels)
    assert acc >= 0.99


def test_partition_equal_blocks():
    labels = np.repeat(np.arange(100), 2)
    ds = datahub.LabeledFeatureSet(np.random.default_rng(0).normal(size=(200, 3)), labels)
    stream = datahub.partition_stream(ds, 10, seed=1)
    assert stream.classes_per_state == 10
    assert stream.num_states == 10
    seen = np.concatenate([stream.classes_of_state(t) for t in range(10)])
    assert sorted(seen.tolist()) == list(range(100))


def test_partition_degenerate_and_errors():
    ds = datahub.generate_synthetic(20, 2, 2, 0.1, seed=0)
    stream = datahub.partition_stream(ds, 1, seed=0)
    assert stream.num_states == 1
    assert stream.classes_per_state == 20
    with pytest.raises(ConfigError, match="divisible"):
        datahub.partition_stream(ds, 7, seed=0)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_partition_determinism(seed):
    ds = datahub.generate_synthetic(12, 2, 2, 0.1, seed=1)
    a = datahub.partition_stream(ds, 4, seed)
    b = datahub.partition_stream(ds, 4, seed)
    assert np.array_equal(a.class_order, b.class_order)


@given(st.sampled_from([(12, 2), (12, 3), (12, 4), (20, 5), (8, 8)]), st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_partition_coverage(shape, seed):
    classes, states = shape
    ds = datahub.generate_synthetic(classes, 2, 2, 0.1, seed=2)
    stream = datahub.partition_stream(ds, states, seed)
    all_classes = np.concatenate([stream.classes_of_state(t) for t in range(states)])
    assert sorted(all_classes.tolist()) == sorted(ds.class_ids().tolist())
    for c in ds.class_ids():
        t = stream.state_of_class(int(c))
        assert int(c) in stream.classes_of_state(t)


def test_incremental_id_round_trip():
    ds = datahub.generate_synthetic(6, 2, 2, 0.1, seed=4)
    stream = datahub.partition_stream(ds, 3, seed=9)
    for c in ds.class_ids():
        i = stream.incremental_id(int(c))
        assert stream.original_label(i) == int(c)
        assert stream.state_of_incremental(i) == stream.state_of_class(int(c))
    with pytest.raises(ConfigError):
        stream.incremental_id(999)


def test_state_view_contains_only_new_classes():
    ds = datahub.generate_synthetic(6, 5, 3, 0.1, seed=4)
    stream = datahub.partition_stream(ds, 3, seed=9)
    audit = datahub.AccessAudit(memoryless=True)
    view = datahub.state_training_view(stream, ds, 1, audit)
    assert view.num_samples == 10
    assert set(np.unique(view.labels).tolist()) == {2, 3}
    with pytest.raises(ConfigError):
        datahub.state_training_view(stream, ds, 5, audit)


def test_union_of_views_is_whole_training_set():
    ds = datahub.generate_synthetic(6, 7, 3, 0.3, seed=8)
    stream = datahub.partition_stream(ds, 3, seed=2)
    audit = datahub.AccessAudit(memoryless=True)
    parts = [datahub.state_training_view(stream, ds, t, audit) for t in range(3)]
    stacked = np.vstack([p.features for p in parts])
    assert stacked.shape == ds.features.shape
    order_a = np.lexsort(stacked.T)
    order_b = np.lexsort(ds.features.T)
    assert np.array_equal(stacked[order_a], ds.features[order_b])
    assert audit.cross_state_reads() == 0
    assert audit.total_reads() == ds.num_samples


def test_memoryless_audit_raises_on_cross_read():
    ds = datahub.generate_synthetic(4, 3, 2, 0.1, seed=1)
    stream = datahub.partition_stream(ds, 2, seed=1)
    audit = datahub.AccessAudit(memoryless=True)
    past_rows = np.flatnonzero(np.isin(ds.labels, stream.classes_of_state(0)))
    with pytest.raises(IntegrityError, match="memoryless"):
        datahub.subset_view(stream, ds, past_rows, read_state=1, audit=audit)
    relaxed = datahub.AccessAudit(memoryless=False)
    datahub.subset_view(stream, ds, past_rows, read_state=1, audit=relaxed)
    assert relaxed.cross_state_reads() == past_rows.size


def test_cumulative_test_view_grows():
    ds = datahub.generate_synthetic(6, 4, 3, 0.1, seed=3, split="test")
    stream = datahub.partition_stream(ds, 3, seed=5)
    sizes = [datahub.cumulative_test_view(stream, ds, t).num_samples for t in range(3)]
    assert sizes == [8, 16, 24]
    view = datahub.cumulative_test_view(stream, ds, 1)
    assert view.labels.max() == 3
