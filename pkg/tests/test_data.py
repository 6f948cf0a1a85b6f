import numpy as np
import pytest
from hypothesis import given, strategies as st

from rcconformal.data import ColumnSchema, DataError, ObservationTable, emit_csv, load_csv, make_splits, subset

from conftest import toy_table

SCHEMA = ColumnSchema(outcome="y", treatment="a", source="s", v=("v1", "v2"), u=("u1",), row_id="id")


def write(path, text):
    path.write_text(text)
    return path


def test_minimal_valid_pattern(tmp_path):
    f = write(tmp_path / "d.csv", "id,y,a,s,v1,v2,u1\n1,1.0,0,1,0.1,0.2,0.3\n2,2.0,1,1,0.4,0.5,0.6\n3,,,0,0.7,0.8,\n")
    t = load_csv(f, SCHEMA)
    assert t.n == 3 and t.n_target == 1
    assert t.row(2).y is None and t.row(2).a is None and t.row(2).u is None


def test_target_row_with_outcome_is_rejected(tmp_path):
    f = write(tmp_path / "d.csv", "id,y,a,s,v1,v2,u1\n1,1.0,0,1,0,0,0\n2,2.0,1,1,0,0,0\n3,1.2,,0,0,0,\n")
    with pytest.raises(DataError, match="target row carries outcome"):
        load_csv(f, SCHEMA)


def test_target_row_with_u_is_rejected(tmp_path):
    f = write(tmp_path / "d.csv", "id,y,a,s,v1,v2,u1\n1,1.0,0,1,0,0,0\n2,2.0,1,1,0,0,0\n3,,,0,0,0,4\n")
    with pytest.raises(DataError, match="target row carries u"):
        load_csv(f, SCHEMA)


def test_source_row_missing_outcome_is_rejected(tmp_path):
    f = write(tmp_path / "d.csv", "id,y,a,s,v1,v2,u1\n1,,0,1,0,0,0\n2,2.0,1,1,0,0,0\n")
    with pytest.raises(DataError):
        load_csv(f, SCHEMA)


def test_non_numeric_covariate(tmp_path):
    f = write(tmp_path / "d.csv", "id,y,a,s,v1,v2,u1\n1,1.0,0,1,abc,0,0\n2,2.0,1,1,0,0,0\n")
    with pytest.raises(DataError, match=":2"):
        load_csv(f, SCHEMA)


def test_schema_mismatch(tmp_path):
    f = write(tmp_path / "d.csv", "id,y,a,s,v1,u1\n1,1.0,0,1,0,0\n")
    with pytest.raises(DataError, match="v2"):
        load_csv(f, SCHEMA)


def test_single_level_rejected(tmp_path):
    f = write(tmp_path / "d.csv", "id,y,a,s,v1,v2,u1\n1,1.0,0,1,0,0,0\n2,2.0,0,1,0,0,0\n")
    with pytest.raises(DataError):
        load_csv(f, SCHEMA)


def test_csv_round_trip(tmp_path):
    t = toy_table(50)
    schema = ColumnSchema(outcome="y", treatment="a", source="s", v=("v1", "v2"), u=("u1",), row_id="id")
    emit_csv(t, tmp_path / "t.csv", schema)
    back = load_csv(tmp_path / "t.csv", schema)
    assert back.equals(t)
    emit_csv(back, tmp_path / "t2.csv", schema)
    assert (tmp_path / "t.csv").read_text() == (tmp_path / "t2.csv").read_text()


def test_table_is_immutable(table):
    with pytest.raises(ValueError):
        table.v[0, 0] = 1.0


def test_x_features_refused_for_target_rows(table):
    target = np.flatnonzero(table.s == 0)
    with pytest.raises(DataError):
        table.features(target[:1], "x")


def test_direct_construction_checks_pattern():
    v = np.zeros((2, 1))
    s = np.array([1, 0])
    y = np.ma.masked_array([1.0, 2.0], mask=[False, False])
    a = np.ma.masked_array([0, 0], mask=[False, True])
    u = np.ma.masked_array(np.zeros((2, 0)), mask=np.zeros((2, 0), bool))
    with pytest.raises(DataError, match="outcome"):
        ObservationTable(v=v, s=s, y=y, a=a, u=u)


def test_split_sizes():
    n = 100
    rng = np.random.default_rng(1)
    t = ObservationTable.from_full(rng.normal(size=(n, 1)), np.ones(n, int), rng.normal(size=n),
                                   np.arange(n) % 2, rng.normal(size=(n, 1)))
    sp = make_splits(t, (0.5, 0.5), seed=7)
    assert (sp.train1.size, sp.train2.size, sp.cal.size) == (25, 25, 50)
    again = make_splits(t, (0.5, 0.5), seed=7)
    assert all(np.array_equal(getattr(sp, k), getattr(again, k)) for k in ("train1", "train2", "cal"))


def test_split_fraction_errors(table):
    with pytest.raises(DataError, match="fractions exceed 1"):
        make_splits(table, (0.9, 0.2))
    with pytest.raises(DataError, match="positive"):
        make_splits(table, (0.0, 0.5))


def test_split_fails_without_level_in_fold():
    n = 12
    a = np.zeros(n, int)
    a[0] = 1
    t = ObservationTable.from_full(np.zeros((n, 1)), np.ones(n, int), np.zeros(n), a)
    with pytest.raises(DataError, match="treatment"):
        make_splits(t, seed=0)


@given(n=st.integers(20, 300), seed=st.integers(0, 10_000), f_train=st.floats(0.2, 0.7),
       rate=st.floats(0.3, 0.95))
def test_split_is_a_partition(n, seed, f_train, rate):
    t = toy_table(n, seed=seed, source_rate=rate)
    try:
        sp = make_splits(t, (f_train, 1 - f_train), seed=seed)
    except DataError:
        return
    labels = sp.labels(t.n)
    assert (labels >= 0).all()
    folds = np.concatenate([sp.train1, sp.train2, sp.cal, sp.holdout])
    assert np.array_equal(np.sort(folds), np.arange(t.n))
    assert abs(sp.train1.size - sp.train2.size) <= 2  # source and target halves each differ by at most one
    src = np.flatnonzero(t.s == 1)
    assert abs(np.isin(sp.train1, src).sum() - np.isin(sp.train2, src).sum()) <= 1


@given(seed=st.integers(0, 1000), level=st.sampled_from([0, 1]))
def test_subset_properties(seed, level):
    t = toy_table(80, seed=seed)
    sub = subset(t, a=level, s=1)
    assert (sub.s == 1).all() and (sub.a.compressed() == level).all()
    assert sub.n == int(t.treated(level).sum())
    assert subset(sub, a=level, s=1).equals(sub)
    tgt = subset(t, s=0)
    assert np.ma.getmaskarray(tgt.y).all() and np.ma.getmaskarray(tgt.a).all() and np.ma.getmaskarray(tgt.u).all()
    pred = subset(t, lambda a, s: (a == level) & (s == 1))
    assert pred.equals(sub)


@given(seed=st.integers(0, 1000))
def test_missingness_invariant_survives_transformations(seed):
    t = toy_table(60, seed=seed)
    idx = np.random.default_rng(seed).permutation(t.n)[:30]
    for tab in (t, t.take(idx), subset(t, s=1), subset(t, s=0)):
        for r in tab.rows():
            if r.s == 0:
                assert r.y is None and r.a is None and r.u is None
            else:
                assert r.y is not None and r.a is not None and r.u is not None
