import numpy as np
import pytest

from streamgp.data import (
    CAUCHY_CLIP,
    SCENARIOS,
    ByGivenBoundaries,
    Dataset,
    Shuffled,
    SortedByColumn,
    batch_indices,
    gen_synthetic,
    load_csv,
    make_batches,
    plan_from_dict,
    plan_to_dict,
    save_csv,
    sine_target,
    train_test_split,
)
from streamgp.errors import EmptyFile, InvalidPlan, ParseError, UnknownScenario


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# plans

@pytest.mark.parametrize("plan", [SortedByColumn(1, 3), Shuffled(4, 7), ByGivenBoundaries((2, 5))])
def test_plans_partition_rows(plan):
    X = np.random.default_rng(0).normal(size=(11, 2))
    parts = batch_indices(11, plan, X)
    assert sorted(np.concatenate(parts).tolist()) == list(range(11))
    assert plan_from_dict(plan_to_dict(plan)) == plan


def test_sorted_plan_orders_and_balances():
    X = np.array([[3.0], [1.0], [2.0], [1.0], [0.0]])
    parts = batch_indices(5, SortedByColumn(0, 2), X)
    assert [p.tolist() for p in parts] == [[4, 1, 3], [2, 0]]


def test_shuffled_plan_is_seeded():
    a = batch_indices(20, Shuffled(3, 5))
    b = batch_indices(20, Shuffled(3, 5))
    c = batch_indices(20, Shuffled(3, 6))
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert not all(np.array_equal(u, v) for u, v in zip(a, c))


@pytest.mark.parametrize("plan", [ByGivenBoundaries((5, 3)), ByGivenBoundaries((0,)), ByGivenBoundaries((10,)),
                                  SortedByColumn(0, 11), SortedByColumn(3, 2), Shuffled(0, 1)])
def test_invalid_plans(plan):
    X = np.zeros((10, 1))
    with pytest.raises(InvalidPlan):
        batch_indices(10, plan, X)


def test_unknown_plan_kind():
    with pytest.raises(InvalidPlan):
        plan_from_dict({"kind": "spiral"})


# CSV

def test_load_csv_header_and_target_by_name(tmp_path):
    p = write(tmp_path, "a,b,t\n1,2,3\n4,5,6\n")
    ds = load_csv(p, "b")
    np.testing.assert_array_equal(ds.y, [2, 5])
    np.testing.assert_array_equal(ds.X, [[1, 3], [4, 6]])
    assert ds.feature_names == ("a", "t")


def test_load_csv_without_header(tmp_path):
    p = write(tmp_path, "1;2\n3;4\n")
    ds = load_csv(p, 0, delimiter=";", has_header=False)
    np.testing.assert_array_equal(ds.y, [1, 3])
    assert ds.feature_names is None


def test_parse_error_reports_file_line(tmp_path):
    p = write(tmp_path, "a,b\n1,2\n\n3,x\n")
    with pytest.raises(ParseError) as err:
        load_csv(p)
    assert err.value.row == 4 and err.value.column == 1


@pytest.mark.parametrize("text", ["a,b\n1,2\n3\n", "a,b\n1,nan\n", "a,b\n1,inf\n"])
def test_bad_rows(tmp_path, text):
    with pytest.raises(ParseError):
        load_csv(write(tmp_path, text))


def test_empty_file(tmp_path):
    with pytest.raises(EmptyFile):
        load_csv(write(tmp_path, "a,b\n"))


@pytest.mark.parametrize("target", ["zz", 5, -4])
def test_bad_target(tmp_path, target):
    with pytest.raises(ParseError):
        load_csv(write(tmp_path, "a,b,c\n1,2,3\n"), target)


def test_single_column_has_no_features(tmp_path):
    with pytest.raises(ParseError):
        load_csv(write(tmp_path, "y\n1\n2\n"))


def test_csv_roundtrip_is_exact(tmp_path):
    ds = gen_synthetic("IIDUniform", 3)
    p = tmp_path / "r.csv"
    save_csv(ds, p)
    back = load_csv(p)
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.y, ds.y)


def test_dataset_rejects_nonfinite():
    with pytest.raises(ValueError):
        Dataset(np.array([[np.nan]]), np.array([1.0]))


def test_train_test_split():
    ds = gen_synthetic("IIDUniform", 0)
    tr, te = train_test_split(ds, 0.1, 4)
    assert te.n == 15 and tr.n == 135
    both = np.sort(np.concatenate([tr.X[:, 0], te.X[:, 0]]))
    np.testing.assert_array_equal(both, np.sort(ds.X[:, 0]))
    tr2, _ = train_test_split(ds, 0.1, 4)
    np.testing.assert_array_equal(tr.X, tr2.X)
    with pytest.raises(ValueError):
        train_test_split(ds, 1.0, 0)


# synthetic scenarios

@pytest.mark.parametrize("name", [s for s in SCENARIOS if not s.startswith("Large3D")])
def test_scenarios_are_reproducible(name):
    a, b = gen_synthetic(name, 11), gen_synthetic(name, 11)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.y, gen_synthetic(name, 12).y)


def test_scenario_shapes():
    assert gen_synthetic("GrowingDomain", 0).n == 500
    assert gen_synthetic("IIDUniform", 0).n == 150
    assert gen_synthetic("OutlierCauchy", 0).n == 1300
    s = gen_synthetic("Sine1k", 0)
    assert s.n == 1000 and s.test.n == 500
    assert len(make_batches(s)) == 4
    big = gen_synthetic("Large3D_1", 0, n=600, n_batches=6)
    assert big.X.shape == (600, 3) and len(make_batches(big)) == 6


def test_growing_domain_batches_are_ordered():
    bs = make_batches(gen_synthetic("GrowingDomain", 0))
    assert len(bs) == 10
    for a, b in zip(bs, bs[1:]):
        assert a.X.max() <= b.X.min()


def test_outlier_layout():
    ds = gen_synthetic("OutlierCauchy", 0)
    bs = make_batches(ds)
    assert len(bs) == 10
    for i, b in enumerate(bs):
        if i in (5, 8):
            assert b.X.shape[0] == 150
            assert b.X.min() >= CAUCHY_CLIP[0] and b.X.max() <= CAUCHY_CLIP[1]
        else:
            assert b.X.shape[0] == 125
            assert b.X.min() >= 4.0 and b.X.max() <= 6.0


def test_noise_level_matches_target():
    ds = gen_synthetic("IIDUniform", 0, n=20000)
    r = ds.y - sine_target(ds.X[:, 0])
    assert np.std(r) == pytest.approx(0.3, rel=0.03)


def test_unknown_scenario():
    with pytest.raises(UnknownScenario):
        gen_synthetic("Nope", 0)
    with pytest.raises(InvalidPlan):
        gen_synthetic("OutlierCauchy", 0, outlier_batches=(12,))


def test_three_row_file(tmp_path):
    ds = load_csv(write(tmp_path, "x,y\n0,1\n1,2\n2,3"))
    assert ds.X.shape == (3, 1)
    np.testing.assert_array_equal(ds.y, [1, 2, 3])


def test_nan_cell_names_row(tmp_path):
    with pytest.raises(ParseError, match="row 3"):
        load_csv(write(tmp_path, "x,y\n0,1\n1,NaN\n"))


def test_thousand_row_roundtrip(tmp_path):
    ds = gen_synthetic("Sine1k", 5)
    save_csv(ds, tmp_path / "s.csv")
    back = load_csv(tmp_path / "s.csv")
    assert back.n == 1000
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.y, ds.y)


def test_sorted_ten_rows_in_two_batches():
    X = np.random.default_rng(0).permutation(10).astype(float)[:, None]
    a, b = batch_indices(10, SortedByColumn(0, 2), X)
    assert len(a) == len(b) == 5
    assert sorted(X[a, 0].tolist()) == [0, 1, 2, 3, 4]


def test_uci_sized_plan_is_balanced():
    X = np.random.default_rng(1).normal(size=(1030, 8))
    sizes = [len(p) for p in batch_indices(1030, SortedByColumn(0, 20), X)]
    assert sum(sizes) == 1030 and max(sizes) - min(sizes) <= 1


def test_sine_target_at_zero():
    assert sine_target(np.array([0.0]))[0] == 1.0
