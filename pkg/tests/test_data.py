import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgfeat.data import (DataError, Kind, SchemaConfig, Task, kfold_indices,
                         load_csv, split_kfold)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return str(path)


def test_kind_inference(tmp_path):
    path = write_csv(
        tmp_path / "t.csv",
        ["num", "cat", "flag", "when", "y"],
        [
            ["1.5", "red", "yes", "2021-03-01", "0.1"],
            ["2", "blue", "no", "2021-03-02", "0.2"],
            ["-3e2", "red", "yes", "2021-03-03", "0.3"],
        ],
    )
    d = load_csv(path, SchemaConfig(target_name="y", task=Task.REGRESSION))
    assert d.column("num").kind == Kind.NUMERIC
    assert d.column("cat").kind == Kind.CATEGORICAL
    assert d.column("flag").kind == Kind.BOOLEAN
    assert d.column("when").kind == Kind.DATE
    assert d.n_rows == 3


def test_boolean_values_and_date_days(tmp_path):
    path = write_csv(
        tmp_path / "t.csv",
        ["flag", "when", "y"],
        [["true", "1970-01-01", "1"], ["0", "1970-01-11", "2"]],
    )
    d = load_csv(path, SchemaConfig(target_name="y", task=Task.REGRESSION))
    assert d.column("flag").values.tolist() == [1.0, 0.0]
    # days since the 1970-01-01 epoch
    assert d.column("when").values.tolist() == [0.0, 10.0]


def test_missing_cells_flagged(tmp_path):
    path = write_csv(
        tmp_path / "t.csv",
        ["a", "y"],
        [["1", "0"], ["", "1"], ["3", "0"]],
    )
    d = load_csv(path, SchemaConfig(target_name="y", task=Task.REGRESSION))
    col = d.column("a")
    assert col.missing.tolist() == [False, True, False]
    assert np.isnan(col.values[1])


def test_kind_override_forces_categorical(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["code", "y"], [["1", "0"], ["2", "1"]])
    schema = SchemaConfig(target_name="y", task=Task.REGRESSION,
                          column_kind_overrides={"code": Kind.CATEGORICAL})
    d = load_csv(path, schema)
    assert d.column("code").kind == Kind.CATEGORICAL
    assert list(d.column("code").values) == ["1", "2"]


def test_override_unparseable_cell_errors(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["a", "y"], [["red", "0"]])
    schema = SchemaConfig(target_name="y", task=Task.REGRESSION,
                          column_kind_overrides={"a": Kind.NUMERIC})
    with pytest.raises(DataError):
        load_csv(path, schema)


def test_missing_target_errors(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["a"], [["1"]])
    with pytest.raises(DataError):
        load_csv(path, SchemaConfig(target_name="y", task=Task.REGRESSION))


def test_no_rows_errors(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["a", "y"], [])
    with pytest.raises(DataError):
        load_csv(path, SchemaConfig(target_name="y", task=Task.REGRESSION))


def test_task_target_kind_mismatch_errors(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["a", "y"], [["1", "2.5"], ["2", "3.5"]])
    with pytest.raises(DataError):
        load_csv(path, SchemaConfig(target_name="y", task=Task.CLASSIFICATION))


def test_duplicate_header_errors(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["a", "a", "y"], [["1", "2", "0"]])
    with pytest.raises(DataError):
        load_csv(path, SchemaConfig(target_name="y", task=Task.REGRESSION))


def test_kfold_partition_and_sizes():
    folds = kfold_indices(23, 5, seed=7)
    all_valid = np.concatenate([v for _, v in folds])
    assert sorted(all_valid.tolist()) == list(range(23))
    sizes = [len(v) for _, v in folds]
    assert max(sizes) - min(sizes) <= 1
    for train, valid in folds:
        assert set(train.tolist()) & set(valid.tolist()) == set()
        assert len(train) + len(valid) == 23


def test_kfold_deterministic():
    a = kfold_indices(50, 4, seed=3)
    b = kfold_indices(50, 4, seed=3)
    for (ta, va), (tb, vb) in zip(a, b):
        assert ta.tolist() == tb.tolist() and va.tolist() == vb.tolist()


def test_kfold_stratified_class_balance():
    labels = np.array([0] * 30 + [1] * 12)
    folds = kfold_indices(42, 3, seed=0, labels=labels)
    for cls, total in ((0, 30), (1, 12)):
        counts = [int(np.sum(labels[v] == cls)) for _, v in folds]
        assert max(counts) - min(counts) <= 1
        assert sum(counts) == total


def test_kfold_invalid_k():
    with pytest.raises(DataError):
        kfold_indices(10, 1, seed=0)
    with pytest.raises(DataError):
        kfold_indices(3, 4, seed=0)


def test_split_kfold_stratified_requires_classification(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["a", "y"], [["1", "0.5"], ["2", "1.5"]])
    d = load_csv(path, SchemaConfig(target_name="y", task=Task.REGRESSION))
    with pytest.raises(DataError):
        split_kfold(d, 2, seed=0, stratified=True)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(4, 80), k=st.integers(2, 4), seed=st.integers(0, 1000))
def test_kfold_partition_property(n, k, seed):
    folds = kfold_indices(n, k, seed)
    assert len(folds) == k
    valid = np.concatenate([v for _, v in folds])
    assert sorted(valid.tolist()) == list(range(n))
    sizes = [len(v) for _, v in folds]
    assert max(sizes) - min(sizes) <= 1
