import math

import numpy as np
import pandas as pd
import pytest

from helpers import write_sarcos
from nsvlmc.data import (MultiTaskDataset, TestSplit, convert_eeg, convert_jura, convert_sarcos,
                         denormalize, gen_toy, load_manifest, load_split, normalize, read_csv,
                         read_test_csv, toy_test_split, toy_truth, write_csv, write_test_csv)
from nsvlmc.errors import (EmptyTestSet, MissingFile, SchemaMismatch, SizeMismatch,
                           ZeroVariance)


def test_toy_truth_value():
    assert toy_truth([0.0])[0, 2] == pytest.approx(0.75 * math.cos(1.0), abs=1e-15)
    # 0.75 cos(1) = 0.405227; the quoted 0.40524 is rounded
    assert toy_truth([0.0])[0, 2] == pytest.approx(0.40524, abs=2e-5)


def test_toy_counts_range_and_determinism():
    a, _ = gen_toy(7)
    b, _ = gen_toy(7)
    assert a.sizes == [100, 10, 100]
    assert all(np.array_equal(x, y) for x, y in zip(a.X + a.y, b.X + b.y))
    assert all((x >= -5).all() and (x <= 5).all() for x in a.X)
    assert not np.array_equal(a.X[0], a.X[2])


def test_toy_noise_variance():
    data, truth = gen_toy(0, sizes=(100_000, 1, 1))
    resid = data.y[0] - truth(data.X[0])[:, 0]
    se = 0.04 * math.sqrt(2 / len(resid))
    assert abs(resid.var() - 0.04) < 3 * se


def test_toy_test_split_is_noise_free():
    split = toy_test_split(50)
    assert split.tasks == [0, 1, 2]
    assert np.allclose(split.y[1], toy_truth(split.X[1])[:, 1])


def test_normalize_statistics_and_round_trip(rng):
    data = MultiTaskDataset([rng.normal(3, 2, (20, 2)), rng.normal(-1, 5, (7, 2))],
                            [rng.normal(10, 3, 20), rng.normal(0, 0.1, 7)])
    nd = normalize(data)
    pooled = nd.pooled_inputs()
    assert np.allclose(pooled.mean(0), 0, atol=1e-12) and np.allclose(pooled.std(0), 1)
    assert all(abs(y.mean()) < 1e-12 and abs(y.std() - 1) < 1e-12 for y in nd.y)
    back = denormalize(nd)
    for a, b in zip(back.X + back.y, data.X + data.y):
        assert np.allclose(a, b, rtol=0, atol=1e-12 * max(1, np.abs(b).max()))
    again = normalize(nd)
    assert all(np.allclose(a, b, atol=1e-12) for a, b in zip(again.X + again.y, nd.X + nd.y))


def test_zero_variance_rejected(rng):
    with pytest.raises(ZeroVariance):
        normalize(MultiTaskDataset([np.ones((4, 1))], [rng.standard_normal(4)]))
    with pytest.raises(ZeroVariance):
        normalize(MultiTaskDataset([rng.standard_normal((4, 1))], [np.ones(4)]))


def test_dataset_schema_checks(rng):
    with pytest.raises(SchemaMismatch):
        MultiTaskDataset([rng.standard_normal((3, 1)), rng.standard_normal((3, 2))],
                         [np.zeros(3), np.zeros(3)])
    with pytest.raises(EmptyTestSet):
        TestSplit([], [], [])


def test_csv_round_trip(tmp_path, rng):
    data = MultiTaskDataset([rng.standard_normal((5, 2)), rng.standard_normal((3, 2))],
                            [rng.standard_normal(5), rng.standard_normal(3)], names=["a", "b"])
    write_csv(data, tmp_path / "d.csv")
    back = read_csv(tmp_path / "d.csv")
    assert back.names == ["a", "b"]
    assert all(np.array_equal(a, b) for a, b in zip(back.X + back.y, data.X + data.y))
    split = TestSplit([1], [data.X[1]], [data.y[1]])
    write_test_csv(split, data.names, tmp_path / "t.csv")
    t = read_test_csv(tmp_path / "t.csv", data.names)
    assert t.tasks == [1] and np.array_equal(t.y[0], data.y[1])


def test_csv_errors(tmp_path):
    with pytest.raises(MissingFile):
        read_csv(tmp_path / "nope.csv")
    (tmp_path / "bad.csv").write_text("task,y,x_0\na,1,2\n")
    with pytest.raises(SchemaMismatch):
        read_csv(tmp_path / "bad.csv")


def _canonical(path, names, n, d, rng):
    data = MultiTaskDataset([np.arange(n * d, dtype=float).reshape(n, d) % 97] * len(names),
                            [rng.integers(0, 100, n).astype(float) for _ in names], names=names)
    write_csv(data, path)
    return data


def test_jura_split(tmp_path, rng):
    full = _canonical(tmp_path / "jura.csv", ["Cd", "Ni", "Zn"], 359, 2, rng)
    train, test = load_split("jura", tmp_path)
    assert train.names == ["Cd", "Ni", "Zn"] and train.sizes == [259, 359, 359]
    assert test.tasks == [0] and len(test.y[0]) == 100
    assert np.array_equal(test.y[0], full.y[0][259:])


def test_eeg_split(tmp_path, rng):
    names = ["FZ", "F1", "F2", "F3", "F4", "F5", "F6"]
    _canonical(tmp_path / "eeg.csv", names, 256, 1, rng)
    train, test = load_split("eeg", tmp_path)
    assert train.sizes == [156] * 3 + [256] * 4
    assert test.tasks == [0, 1, 2] and [len(y) for y in test.y] == [100] * 3


def test_split_errors(tmp_path, rng):
    with pytest.raises(MissingFile):
        load_split("jura", tmp_path)
    _canonical(tmp_path / "jura.csv", ["Cd", "Ni", "Zn"], 300, 2, rng)
    with pytest.raises(SizeMismatch):
        load_split("jura", tmp_path)
    _canonical(tmp_path / "jura.csv", ["Cd", "Ni", "Zn"], 359, 3, rng)
    with pytest.raises(SchemaMismatch):
        load_split("jura", tmp_path)
    _canonical(tmp_path / "jura.csv", ["Cd", "Ni", "Cu"], 359, 2, rng)
    with pytest.raises(SchemaMismatch):
        load_split("jura", tmp_path)


def test_sarcos_protocol_sizes(tmp_path):
    write_sarcos(tmp_path)
    sizes = {}
    for case in ("sarcos_a", "sarcos_b", "sarcos_c"):
        train, test = load_split(case, tmp_path)
        sizes[case] = (train.names, train.sizes, [len(y) for y in test.y])
    assert sizes["sarcos_a"] == (["torque4", "torque7"], [50, 44484], [4449])
    assert sizes["sarcos_b"] == (["torque4", "torque7"], [2000, 44484], [4449])
    assert sizes["sarcos_c"] == (["torque6", "torque7"], [2000, 44484], [4449])


def test_convert_jura(tmp_path, rng):
    cols = ["Xloc", "Yloc", "Landuse", "Rock", "Cd", "Co", "Cr", "Cu", "Ni", "Pb", "Zn"]
    for name, n in (("prediction.dat", 259), ("validation.dat", 100)):
        df = pd.DataFrame(rng.uniform(0, 5, (n, len(cols))), columns=cols)
        df.to_csv(tmp_path / name, sep=" ", index=False)
    data = convert_jura(tmp_path / "prediction.dat", tmp_path / "validation.dat",
                        tmp_path / "jura.csv")
    assert data.names == ["Cd", "Ni", "Zn"] and data.sizes == [359] * 3
    train, test = load_split("jura", tmp_path)
    assert train.sizes == [259, 359, 359]
    assert np.allclose(test.y[0], pd.read_csv(tmp_path / "validation.dat", sep=" ")["Cd"])


def test_convert_eeg(tmp_path, rng):
    lines = ["# co2a0000364.rd"]
    sensors = ["FZ", "F1", "F2", "F3", "F4", "F5", "F6", "CZ"]
    for s in sensors:
        lines += [f"0 {s} {i} {v:.3f}" for i, v in enumerate(rng.normal(size=256))]
    (tmp_path / "trial.rd").write_text("\n".join(lines) + "\n")
    data = convert_eeg(tmp_path / "trial.rd", tmp_path / "eeg.csv")
    assert data.names == sensors[:7]
    assert data.X[0][0, 0] == 0.0 and data.X[0][-1, 0] == 1.0
    train, test = load_split("eeg", tmp_path)
    assert train.sizes == [156] * 3 + [256] * 4


def test_convert_sarcos(tmp_path, rng):
    from scipy.io import savemat

    savemat(tmp_path / "train.mat", {"sarcos_inv": rng.standard_normal((30, 28))})
    savemat(tmp_path / "test.mat", {"sarcos_inv_test": rng.standard_normal((10, 28))})
    convert_sarcos(tmp_path / "train.mat", tmp_path / "test.mat", tmp_path)
    d = read_csv(tmp_path / "sarcos_train.csv")
    assert d.names[0] == "torque1" and d.input_dim == 21 and d.sizes == [30] * 7
    with pytest.raises(MissingFile):
        convert_sarcos(tmp_path / "none.mat", tmp_path / "test.mat", tmp_path)


@pytest.mark.parametrize("name", ["jura", "eeg", "sarcos"])
def test_splits_disjoint(name):
    # positional splits: train rows precede test rows whenever both come from one file
    m = load_manifest(name)
    for split in m["splits"].values():
        for t in split["tasks"]:
            if "test" in t and "test" not in m["files"]:
                assert t["train"][1] <= t["test"][0]
