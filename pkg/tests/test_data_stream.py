from pathlib import Path
from typing import NamedTuple

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from src.data_stream import (
    DataError,
    Dataset,
    StreamConfig,
    load_csv,
    make_synthetic,
    stream_groups,
)

EXAMPLE_DATA = Path(__file__).parent.parent / "example_data"


def write(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "data.csv"
    path.write_text(text)
    return path


def test_load_small_binary(tmp_path: Path) -> None:
    path = write(tmp_path, "a,b,y\n1.0,2.0,0\n3.5,-1,1\n0,0.25,1\n")
    d = load_csv(path, "y")
    assert (d.n, d.n_features) == (3, 2)
    assert d.labels.tolist() == [0, 1, 1]
    assert d.class_names == ("0", "1")
    assert d.feature_names == ("a", "b")
    assert d.values.tolist() == [[1.0, 2.0], [3.5, -1.0], [0.0, 0.25]]


def test_load_without_labels(tmp_path: Path) -> None:
    path = write(tmp_path, "a,b\n1,2\n3,4\n")
    d = load_csv(path, None)
    assert d.labels is None
    assert not d.supervised
    assert d.n_features == 2


def test_load_label_by_negative_index() -> None:
    d = load_csv(EXAMPLE_DATA / "toy.csv", "-1")
    assert (d.n, d.n_features) == (40, 6)
    assert d.class_names == ("neg", "pos")
    assert sorted(set(d.labels.tolist())) == [0, 1]
    assert d.name == "toy"


def test_integer_labels_are_remapped(tmp_path: Path) -> None:
    path = write(tmp_path, "x,label\n0.1,7\n0.2,3\n0.3,7\n0.4,11\n")
    d = load_csv(path, "label")
    assert d.class_names == ("3", "7", "11")
    assert d.labels.tolist() == [1, 0, 1, 2]


class BadCsv(NamedTuple):
    text: str
    fragments: tuple[str, ...]


BAD_CSVS = [
    BadCsv("a,b,y\n1,2,0\n3,,1\n", ("row 2", "'b'")),
    BadCsv("a,b,y\n1,2,0\n3,oops,1\n", ("'oops'", "row 2", "'b'")),
    BadCsv("a,b,y\n1,2,0\n3,4,\n", ("label", "row 2")),
]


@pytest.mark.parametrize("case", BAD_CSVS)
def test_load_errors_name_the_cell(tmp_path: Path, case: BadCsv) -> None:
    with pytest.raises(DataError) as e:
        load_csv(write(tmp_path, case.text), "y")
    for fragment in case.fragments:
        assert fragment in str(e.value)


def test_unknown_label_column(tmp_path: Path) -> None:
    with pytest.raises(DataError):
        load_csv(write(tmp_path, "a,b\n1,2\n3,4\n"), "target")


def test_dataset_rejects_non_finite() -> None:
    with pytest.raises(DataError):
        Dataset(np.array([[1.0, np.nan], [2.0, 3.0]]))
    with pytest.raises(DataError):
        Dataset(np.array([[1.0, 2.0]]))


def test_partition_example() -> None:
    d = Dataset(np.zeros((3, 12)))
    groups = stream_groups(d, StreamConfig(group_size=5))
    assert [g.indices for g in groups] == [(0, 1, 2, 3, 4), (5, 6, 7, 8, 9), (10, 11)]
    assert [g.group_id for g in groups] == [0, 1, 2]
    assert groups[2].columns.shape == (3, 2)


@pytest.mark.parametrize("n_features", [1, 2, 7, 12, 31])
@pytest.mark.parametrize("group_size", [1, 3, 5, 40])
@pytest.mark.parametrize("shuffle", [False, True])
def test_groups_partition_features(n_features: int, group_size: int, shuffle: bool) -> None:
    d = Dataset(np.random.default_rng(0).standard_normal((4, n_features)))
    groups = stream_groups(d, StreamConfig(group_size, seed=3, shuffle=shuffle))
    flat = [i for g in groups for i in g.indices]
    assert sorted(flat) == list(range(n_features))
    assert all(len(g.indices) == group_size for g in groups[:-1])
    assert 1 <= len(groups[-1].indices) <= group_size
    for g in groups:
        np.testing.assert_array_equal(g.columns, d.values[:, list(g.indices)])


def test_shuffled_stream_is_seed_deterministic() -> None:
    d = Dataset(np.random.default_rng(1).standard_normal((5, 20)))
    first = stream_groups(d, StreamConfig(4, seed=9, shuffle=True))
    second = stream_groups(d, StreamConfig(4, seed=9, shuffle=True))
    other = stream_groups(d, StreamConfig(4, seed=10, shuffle=True))
    assert [g.indices for g in first] == [g.indices for g in second]
    assert [g.indices for g in first] != [g.indices for g in other]


def test_group_size_must_be_positive() -> None:
    with pytest.raises(ValueError):
        StreamConfig(group_size=0)


def test_csv_round_trip_is_exact(tmp_path: Path) -> None:
    d = make_synthetic(30, 2, 3, seed=4)
    path = tmp_path / "synthetic.csv"
    d.to_csv(path)
    back = load_csv(path, "label")
    np.testing.assert_array_equal(back.values, d.values)
    np.testing.assert_array_equal(back.labels, d.labels)
    assert back.feature_names == d.feature_names


def test_synthetic_single_feature_is_separated() -> None:
    d = make_synthetic(400, 1, 0, seed=0)
    assert d.n_features == 1
    x = d.values[:, 0]
    gap = x[d.labels == 1].mean() - x[d.labels == 0].mean()
    assert gap >= 2.0


def test_synthetic_is_deterministic() -> None:
    a = make_synthetic(50, 3, 4, seed=11)
    b = make_synthetic(50, 3, 4, seed=11)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


def test_synthetic_informative_columns_are_learnable() -> None:
    d = make_synthetic(200, 5, 95, seed=0)
    X = d.values[:, :5]
    model = LogisticRegression().fit(X, d.labels)
    assert model.score(X, d.labels) >= 0.9
    assert d.feature_names[:2] == ("informative_0", "informative_1")
    assert d.feature_names[-1] == "noise_94"


def test_take_restricts_instances() -> None:
    d = make_synthetic(10, 1, 1, seed=2)
    part = d.take([0, 3, 5])
    assert part.n == 3
    np.testing.assert_array_equal(part.values, d.values[[0, 3, 5]])
    np.testing.assert_array_equal(part.labels, d.labels[[0, 3, 5]])
