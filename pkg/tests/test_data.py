"""Containers, CSV ingestion, and fold splitting."""

import numpy as np
import pytest

from msmbounds.data import (
    Dataset,
    FoldAssignment,
    PanelDataset,
    load_csv,
    load_panel_csv,
    save_csv,
    split_folds,
)
from msmbounds.errors import (
    BadFoldCount,
    DataError,
    EmptyFile,
    MissingColumn,
    ParseError,
    RaggedPanel,
)


def test_dataset_shapes_and_missing_x():
    d = Dataset(None, [0.0, 1.0, 2.0], [1.0, 2.0, 3.0])
    assert d.n == 3 and d.d == 0
    assert d.x.shape == (3, 0)
    d2 = Dataset([1.0, 2.0, 3.0], [0.0, 1.0, 2.0], [1.0, 2.0, 3.0])
    assert d2.x.shape == (3, 1)


def test_dataset_immutable():
    d = Dataset(None, [0.0, 1.0], [1.0, 2.0])
    with pytest.raises(AttributeError):
        d.y = np.zeros(2)
    with pytest.raises(ValueError):
        d.a[0] = 5.0
    arr = np.array([1.0, 2.0])
    d3 = Dataset(None, arr, arr)
    arr[0] = 99.0
    assert d3.a[0] == 1.0


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(None, [1.0, 2.0], [1.0])
    with pytest.raises(DataError):
        Dataset(None, [1.0], [1.0])
    with pytest.raises(DataError):
        Dataset(None, [1.0, np.nan], [1.0, 2.0])
    with pytest.raises(DataError):
        Dataset([[1.0], [np.inf]], [1.0, 2.0], [1.0, 2.0])


def test_dataset_take_preserves_order():
    d = Dataset([[1.0], [2.0], [3.0]], [10.0, 20.0, 30.0], [0.1, 0.2, 0.3])
    sub = d.take([2, 0])
    np.testing.assert_array_equal(sub.a, [30.0, 10.0])
    np.testing.assert_array_equal(sub.x[:, 0], [3.0, 1.0])


def test_panel_shapes_and_reduction():
    x = np.arange(8.0).reshape(4, 2, 1)
    a = np.arange(8.0).reshape(4, 2)
    p = PanelDataset(["a", "b", "c", "d"], x, a, [1.0, 2.0, 3.0, 4.0])
    assert (p.n, p.T, p.d) == (4, 2, 1)
    with pytest.raises(DataError):
        p.to_static()
    p1 = PanelDataset(["a", "b"], None, [[1.0], [2.0]], [0.5, 0.6])
    s = p1.to_static()
    np.testing.assert_array_equal(s.a, [1.0, 2.0])
    assert s.d == 0


def test_panel_single_covariate_promotion():
    p = PanelDataset(["a", "b"], [[1.0, 2.0], [3.0, 4.0]],
                     [[0.0, 1.0], [1.0, 0.0]], [1.0, 2.0])
    assert p.x.shape == (2, 2, 1)


def test_panel_take():
    p = PanelDataset(["a", "b", "c"], None,
                     [[1.0], [2.0], [3.0]], [0.1, 0.2, 0.3])
    sub = p.take([2, 1])
    assert sub.ids == ["c", "b"]
    np.testing.assert_array_equal(sub.a[:, 0], [3.0, 2.0])


def test_split_folds_balanced_and_seeded():
    fa = split_folds(11, 3, seed=5)
    sizes = sorted(len(fa.members(k)) for k in range(3))
    assert sizes == [3, 4, 4]
    again = split_folds(11, 3, seed=5)
    np.testing.assert_array_equal(fa.fold_of_unit, again.fold_of_unit)
    other = split_folds(11, 3, seed=6)
    assert not np.array_equal(fa.fold_of_unit, other.fold_of_unit)


def test_split_folds_partition():
    fa = split_folds(20, 4, seed=1)
    all_members = np.concatenate([fa.members(k) for k in range(4)])
    assert sorted(all_members.tolist()) == list(range(20))
    comp = fa.complement(0)
    assert set(comp) == set(range(20)) - set(fa.members(0))


def test_split_folds_rejects_bad_k():
    with pytest.raises(BadFoldCount):
        split_folds(5, 1, seed=0)
    with pytest.raises(BadFoldCount):
        split_folds(5, 6, seed=0)
    with pytest.raises(BadFoldCount):
        FoldAssignment([0, 0, 1], 3)


def test_csv_round_trip(tmp_path):
    d = Dataset([[0.1, 0.2], [0.3, 0.4], [1 / 3, 2 / 7]],
                [1.0, 2.0, np.pi], [0.5, -1.5, 1e-17])
    path = tmp_path / "t.csv"
    save_csv(d, path)
    back = load_csv(path, {"x": ["x1", "x2"]})
    np.testing.assert_array_equal(back.a, d.a)
    np.testing.assert_array_equal(back.x, d.x)
    np.testing.assert_array_equal(back.y, d.y)


def test_csv_schema_and_errors(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("dose,resp\n1.0,2.0\n3.0,4.0\n")
    d = load_csv(path, {"a": "dose", "y": "resp"})
    np.testing.assert_array_equal(d.a, [1.0, 3.0])
    with pytest.raises(MissingColumn):
        load_csv(path, {"a": "nope", "y": "resp"})
    bad = tmp_path / "bad.csv"
    bad.write_text("a,y\n1.0,2.0\nx,4.0\n")
    with pytest.raises(ParseError) as exc:
        load_csv(bad)
    assert exc.value.row == 3 and exc.value.col == "a"
    empty = tmp_path / "empty.csv"
    empty.write_text("a,y\n")
    with pytest.raises(EmptyFile):
        load_csv(empty)
    with pytest.raises(DataError):
        load_csv(tmp_path / "missing.csv")


def test_panel_csv_round_trip(tmp_path):
    p = PanelDataset(["u1", "u2"],
                     np.array([[[0.1], [0.2]], [[0.3], [0.4]]]),
                     np.array([[1.0, 2.0], [3.0, 4.0]]),
                     [10.0, 20.0])
    path = tmp_path / "p.csv"
    save_csv(p, path)
    back = load_panel_csv(path, {"x": ["x1"]})
    assert back.ids == ["u1", "u2"]
    np.testing.assert_array_equal(back.a, p.a)
    np.testing.assert_array_equal(back.x, p.x)
    np.testing.assert_array_equal(back.y, p.y)


def test_panel_csv_ragged_and_inconsistent(tmp_path):
    ragged = tmp_path / "r.csv"
    ragged.write_text("id,t,a,y\nu1,1,0.0,1.0\nu1,2,0.0,1.0\nu2,1,0.0,2.0\n")
    with pytest.raises(RaggedPanel):
        load_panel_csv(ragged)
    dup = tmp_path / "d.csv"
    dup.write_text("id,t,a,y\nu1,1,0.0,1.0\nu1,1,0.5,1.0\n")
    with pytest.raises(RaggedPanel):
        load_panel_csv(dup)
    ycng = tmp_path / "y.csv"
    ycng.write_text("id,t,a,y\nu1,1,0.0,1.0\nu1,2,0.0,9.0\nu2,1,0.0,2.0\nu2,2,0.0,2.0\n")
    with pytest.raises(RaggedPanel):
        load_panel_csv(ycng)
    offset = tmp_path / "o.csv"
    offset.write_text("id,t,a,y\nu1,2,0.0,1.0\nu1,3,0.0,1.0\n")
    with pytest.raises(RaggedPanel):
        load_panel_csv(offset)
