import math

import numpy as np
import pytest

from edcnn.datagen import (
    CsvFormatError,
    LabeledDataset,
    SplitSpec,
    gen_sinc_test,
    gen_sinc_train,
    gen_two_class_signals,
    load_csv,
    sinc_norm,
    split,
    window_dataset,
    window_series,
    write_csv,
)


def test_sinc_special_points():
    x = np.zeros((1, 3))
    x[0, 0] = math.pi
    assert abs(sinc_norm(x)[0]) < 1e-15
    assert sinc_norm(np.zeros((1, 4)))[0] == 1.0


def test_sinc_train_noise_variance():
    data = gen_sinc_train(30, 10_000, 0.01, seed=3)
    resid = data.targets - sinc_norm(data.features)
    assert 0.008 <= resid.var(ddof=1) <= 0.012
    assert data.features.min() >= -10 and data.features.max() <= 10


def test_sinc_test_exact_and_range():
    data = gen_sinc_test(30, 2000, seed=5)
    r = np.sqrt((data.features ** 2).sum(axis=1))
    assert np.max(np.abs(data.targets - np.sin(r) / r)) <= 1e-15
    # global minimum of sin(r)/r from a dense scan
    grid = np.linspace(1e-6, 50, 2_000_001)
    lo = (np.sin(grid) / grid).min()
    assert -0.2173 < lo < -0.2172
    assert np.all(data.targets >= lo - 1e-12) and np.all(data.targets <= 1)


def test_sinc_degenerate_dim():
    data = gen_sinc_test(1, 50, seed=0)
    assert data.d == 1 and data.m == 50


def test_sinc_determinism_and_disjointness():
    a = gen_sinc_train(5, 100, seed=1)
    b = gen_sinc_train(5, 100, seed=1)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.targets, b.targets)
    c = gen_sinc_test(5, 100, seed=2)
    rows_a = {r.tobytes() for r in a.features}
    assert not any(r.tobytes() in rows_a for r in c.features)


@pytest.mark.parametrize("kwargs", [dict(d=0, m=5), dict(d=3, m=0), dict(d=3, m=5, noise_var=-1)])
def test_sinc_invalid(kwargs):
    with pytest.raises(ValueError):
        gen_sinc_train(**kwargs)


def test_two_class_nearest_centroid():
    data = gen_two_class_signals(40, 400, margin=10, seed=1)
    X, y = data.features, data.targets
    centroids = np.stack([X[y == c].mean(axis=0) for c in (0, 1)])
    pred = np.argmin(((X[:, None, :] - centroids[None]) ** 2).sum(-1), axis=1)
    assert np.mean(pred != y) == 0.0
    assert np.sum(y == 0) == np.sum(y == 1) == 200


def test_two_class_small_and_deterministic():
    data = gen_two_class_signals(8, 2, margin=1, seed=0)
    assert sorted(data.targets.tolist()) == [0, 1]
    a = gen_two_class_signals(16, 30, seed=4)
    b = gen_two_class_signals(16, 30, seed=4)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.targets, b.targets)
    with pytest.raises(ValueError):
        gen_two_class_signals(3, 10)
    with pytest.raises(ValueError):
        gen_two_class_signals(10, 10, margin=0)


def test_load_csv_basic(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("1,2,0.5\n3,4,0.7\n5,6,0.9\n")
    data = load_csv(f, "features_then_target")
    assert (data.d, data.m) == (2, 3)
    np.testing.assert_array_equal(data.targets, [0.5, 0.7, 0.9])


def test_load_csv_labels_and_header(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("a,b,label\n1e-3,2.5E2,1\n3,4,0\n")
    data = load_csv(f, "features_then_label", skip_header=True)
    assert data.kind == "classification" and data.n_classes == 2
    np.testing.assert_array_equal(data.features[0], [1e-3, 250.0])


@pytest.mark.parametrize("text,row", [("1,2,3\n4,5\n", 2), ("1,2,3\n4,x,6\n", 2), ("", 0)])
def test_load_csv_errors(tmp_path, text, row):
    f = tmp_path / "bad.csv"
    f.write_text(text)
    with pytest.raises(CsvFormatError) as exc:
        load_csv(f)
    assert exc.value.row == row
    assert f"row {row}" in str(exc.value)


def test_csv_round_trip(tmp_path):
    data = gen_sinc_train(4, 25, seed=9)
    f1, f2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(data, f1)
    back = load_csv(f1)
    np.testing.assert_array_equal(back.features, data.features)
    np.testing.assert_array_equal(back.targets, data.targets)
    write_csv(back, f2)
    assert f1.read_text() == f2.read_text()


def test_window_series_counts():
    rng = np.random.default_rng(0)
    for T, n in [(160, 2), (80, 1), (159, 1), (400, 5)]:
        out = window_series(rng.normal(size=(T, 3)), 80)
        assert out.shape == (n, 240)
        assert out.shape[0] == T // 80
    with pytest.raises(ValueError):
        window_series(np.zeros((79, 3)), 80)


def test_window_series_time_major():
    stream = np.arange(12, dtype=float).reshape(4, 3)  # rows (x_t, y_t, z_t)
    out = window_series(stream, 2)
    np.testing.assert_array_equal(out, [[0, 1, 2, 3, 4, 5], [6, 7, 8, 9, 10, 11]])


def test_window_dataset_majority_labels():
    stream = np.zeros((6, 3))
    ds = window_dataset(stream, [0, 1, 1, 2, 0, 1], 3)
    np.testing.assert_array_equal(ds.targets, [1, 0])  # three-way tie goes to 0


def test_split_fraction_sizes():
    data = gen_sinc_train(2, 10, seed=0)
    tr, te = split(data, SplitSpec(fraction=0.8, seed=1))
    assert (tr.m, te.m) == (8, 2)


def test_split_by_group():
    data = LabeledDataset(np.arange(8.0).reshape(4, 2), [0.1, 0.2, 0.3, 0.4])
    tr, te = split(data, SplitSpec(mode="by_group", group_ids=[1, 1, 2, 2], train_groups=[1]))
    np.testing.assert_array_equal(tr.features, [[0, 1], [2, 3]])
    np.testing.assert_array_equal(te.features, [[4, 5], [6, 7]])
    with pytest.raises(ValueError):
        SplitSpec(mode="by_group")


def test_split_stratified_and_partition():
    data = gen_two_class_signals(8, 100, seed=2)
    tr, te = split(data, SplitSpec(fraction=0.8, seed=3))
    for part, n in ((tr, 40), (te, 10)):
        for c in (0, 1):
            assert abs(np.sum(part.targets == c) - n) <= 1
    both = np.concatenate([tr.features, te.features])
    assert sorted(map(bytes, both)) == sorted(map(bytes, data.features))
    assert not ({bytes(r) for r in tr.features} & {bytes(r) for r in te.features})
