import csv
import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlconf.association import AnalysisRecord
from mlconf.data import (
    MLDataset,
    dataset_stats,
    dump_synthetic,
    export_table,
    load_arff,
    parse_arff,
    parse_label_spec,
    read_table,
    split,
    synth_generate,
    write_arff,
)
from mlconf.exceptions import ArffError, DataError
from mlconf.labelsets import joint_from_marginals, labelsets_to_indices

DENSE = """% comment
@relation 'toy: -C 2'
@attribute rain {0,1}
@attribute wind {0,1}
@attribute pressure numeric
@data
1,0,0.25
0,1,-1.5
1,1,3.0
"""


def test_dense_fixture(data_dir):
    ds = load_arff(data_dir / "toy.arff")
    assert (ds.n_instances, ds.n_labels, ds.n_features) == (3, 2, 1)
    assert ds.label_names == ["rain", "wind"]
    assert ds.Y.tolist() == [[1, 0], [0, 1], [1, 1]]
    assert ds.X[:, 0].tolist() == [0.25, -1.5, 3.0]
    assert ds.name == "toy"


def test_sparse_fixture(data_dir):
    ds = load_arff(data_dir / "sparse.arff")
    assert ds.label_names == ["l1", "l2"]
    assert ds.Y.tolist() == [[1, 0], [0, 1], [0, 0]]
    assert ds.feature_names == ["a", "b", "c=red", "c=green"]
    assert ds.X.tolist() == [[1, 0, 1, 0], [0, 0.5, 0, 1], [0, 0, 1, 0]]


def test_sparse_row_expands_with_zeros():
    text = "@relation r\n@attribute l {0,1}\n@attribute x1 numeric\n@attribute x2 numeric\n@attribute x3 numeric\n@data\n{0 1, 3 0.5}\n"
    ds = parse_arff(text, labels=1)
    assert ds.Y.tolist() == [[1]]
    assert ds.X.tolist() == [[0.0, 0.0, 0.5]]


def test_keywords_are_case_insensitive():
    ds = parse_arff(DENSE.replace("@attribute", "@ATTRIBUTE").replace("@data", "@DATA"))
    assert ds.n_instances == 3


def test_explicit_label_names_override_relation():
    ds = parse_arff(DENSE, labels=["wind"])
    assert ds.label_names == ["wind"]
    assert ds.feature_names == ["rain=0", "rain=1", "pressure"]


def test_negative_label_count_takes_last_attributes():
    text = "@relation 'r: -C -1'\n@attribute x numeric\n@attribute l {0,1}\n@data\n0.5,1\n"
    ds = parse_arff(text)
    assert ds.label_names == ["l"] and ds.Y.tolist() == [[1]]


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("@relation r\n@attribute l {0,1}\n@data\n1\n", "-C"),
        ("@relation 'r: -C 1'\n@attribute l {a,b}\n@data\na\n", "not binary"),
        ("@relation 'r: -C 1'\n@attribute l {0,1}\n@attribute x numeric\n@data\n1\n", "line 5"),
        ("@relation 'r: -C 1'\n@attribute l {0,1}\n@attribute x string\n@data\n1,a\n", "unsupported"),
        ("@relation 'r: -C 1'\n@attribute l {0,1}\n@data\n?\n", "missing"),
        ("@relation r\n@attribute l {0,1}\n@bogus\n@data\n1\n", "line 3"),
    ],
)
def test_parse_errors(text, fragment):
    with pytest.raises(ArffError) as info:
        parse_arff(text)
    assert fragment in str(info.value)


def test_missing_label_attribute():
    with pytest.raises(ArffError):
        parse_arff(DENSE, labels=["snow"])


def test_label_cap():
    attrs = "".join(f"@attribute l{i} {{0,1}}\n" for i in range(26))
    text = f"@relation 'r: -C 26'\n{attrs}@data\n" + ",".join(["0"] * 26) + "\n"
    with pytest.raises(ArffError, match="cap"):
        parse_arff(text)


def test_missing_numeric_values_are_mean_imputed(caplog):
    text = "@relation 'r: -C 1'\n@attribute l {0,1}\n@attribute x numeric\n@data\n1,1\n0,?\n1,3\n"
    with caplog.at_level(logging.INFO, logger="mlconf.data"):
        ds = parse_arff(text)
    assert ds.X[:, 0].tolist() == [1.0, 2.0, 3.0]
    assert "imputed 1 missing" in caplog.text


def test_parse_label_spec():
    assert parse_label_spec("6") == 6
    assert parse_label_spec("-3") == -3
    assert parse_label_spec("a, b,c") == ["a", "b", "c"]
    assert parse_label_spec(None) is None


def test_write_then_read_round_trip(tmp_path):
    ds, _ = synth_generate(L=3, N=20, seed=1)
    path = tmp_path / "syn.arff"
    write_arff(ds, path)
    back = load_arff(path)
    assert np.array_equal(back.Y, ds.Y)
    assert np.array_equal(back.X, ds.X)


def test_stats_examples():
    ds = MLDataset("z", np.zeros((4, 1)), np.zeros((4, 3)))
    assert dataset_stats(ds).label_cardinality == 0.0
    ds = MLDataset("d", np.zeros((2, 1)), np.array([[0, 1], [0, 1]]))
    assert dataset_stats(ds).distinct_combinations == 1


def test_stats_match_header_counts(data_dir):
    for name, (n, L, m) in {"toy.arff": (3, 2, 1), "sparse.arff": (3, 2, 4)}.items():
        s = dataset_stats(load_arff(data_dir / name))
        assert (s.n_instances, s.n_labels, s.n_features) == (n, L, m)
        assert 0 <= s.label_cardinality <= s.n_labels
        assert s.distinct_combinations <= min(s.n_instances, 2**s.n_labels)


def test_split_examples():
    ds = MLDataset("d", np.arange(10.0)[:, None], np.zeros((10, 1)))
    train, test = split(ds, 0.5, seed=3)
    assert (train.n_instances, test.n_instances) == (5, 5)
    again, _ = split(ds, 0.5, seed=3)
    assert np.array_equal(train.X, again.X)
    tiny = MLDataset("t", np.zeros((2, 1)), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        split(tiny, 0.99, seed=0)


@settings(max_examples=100)
@given(st.integers(0, 2**31 - 1), st.integers(2, 60), st.floats(0.1, 0.9))
def test_split_partition_properties(seed, n, fraction):
    ds = MLDataset("d", np.arange(float(n))[:, None], np.zeros((n, 1)))
    try:
        train, test = split(ds, fraction, seed)
    except ValueError:
        return
    a, b = set(train.X[:, 0]), set(test.X[:, 0])
    assert not a & b
    assert a | b == set(range(n))
    train2, _ = split(ds, fraction, seed)
    assert np.array_equal(train.X, train2.X)


def test_synthetic_independent_joint_is_product():
    ds, J = synth_generate(L=3, N=50, dependence="independent", seed=2)
    M = J @ np.array([[(k >> (2 - j)) & 1 for j in range(3)] for k in range(8)], dtype=float)
    for p, m in zip(J, M):
        assert np.allclose(p, joint_from_marginals(m).probs, atol=1e-14)


def test_synthetic_is_seed_deterministic():
    a, Ja = synth_generate(L=4, N=30, seed=9)
    b, Jb = synth_generate(L=4, N=30, seed=9)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y) and np.array_equal(Ja, Jb)


def test_synthetic_joints_sum_to_one():
    _, J = synth_generate(L=5, N=200, seed=4)
    assert np.max(np.abs(J.sum(axis=1) - 1)) <= 1e-12


def test_synthetic_label_frequencies_follow_true_joints():
    ds, J = synth_generate(L=3, N=20000, seed=0)
    counts = np.bincount(labelsets_to_indices(ds.Y), minlength=8)
    expected = J.sum(axis=0)
    # sum of independent categoricals: variance is sum of p(1 - p)
    sd = np.sqrt((J * (1 - J)).sum(axis=0))
    assert np.all(np.abs(counts - expected) <= 3 * sd)


def test_synthetic_label_limit():
    with pytest.raises(ValueError):
        synth_generate(L=11, N=5)


def test_dump_synthetic(tmp_path):
    ds, J = synth_generate(L=2, N=10, seed=0)
    dump_synthetic(ds, J, tmp_path / "s.arff", tmp_path / "s.json")
    side = json.loads((tmp_path / "s.json").read_text())
    assert side["L"] == 2 and np.allclose(side["joints"], J, atol=0)
    assert load_arff(tmp_path / "s.arff").n_instances == 10


def test_export_empty_csv_is_header_only(tmp_path):
    path = tmp_path / "t.csv"
    export_table([], "csv", path, columns=["a", "b"])
    assert path.read_text() == "a,b\n"


def test_export_one_record(tmp_path):
    rec = AnalysisRecord("scene", "ecc", "em", "HP", 0.123456789, 100)
    path = tmp_path / "r.csv"
    export_table([rec], "csv", path)
    rows = list(csv.reader(path.open()))
    assert len(rows) == 2
    assert rows[1][:6] == ["scene", "ecc", "em", "HP", "0.123457", "100"]
    assert rows[1][rows[0].index("z")] == "NA"


def test_export_json_round_trip(tmp_path):
    rows = [{"a": 0.1 + 0.2, "b": "x", "c": None}, {"a": 1e-300, "b": "y", "c": True}]
    path = tmp_path / "t.json"
    export_table(rows, "json", path)
    assert read_table(path) == rows


def test_export_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        export_table([], "xml", tmp_path / "t.xml")


def test_dataset_validation():
    with pytest.raises(DataError):
        MLDataset("bad", np.zeros((3, 1)), np.zeros((2, 1)))
    with pytest.raises(DataError):
        MLDataset("empty", np.zeros((0, 1)), np.zeros((0, 1)))
