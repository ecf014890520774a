from __future__ import annotations

import random

import numpy as np
import pytest

from nocthrottle.errors import ConfigError
from nocthrottle.labeling import (
    FEATURE_COLUMNS,
    DeflectionRecord,
    LabeledSample,
    label_dataset,
    label_feature_file,
    label_times,
    read_feature_csv,
    read_labeled_arrays,
    read_labeled_csv,
    split_dataset,
    split_indices,
    write_labeled_csv,
)


def brute_force_labels(times, deflections, delta):
    """Union of the windows [d - delta, d + delta], checked pair by pair."""
    return [int(any(abs(t - d) <= delta for d in deflections)) for t in times]


def test_window_union_fixture():
    # windows around 10 and 11 with delta 2 cover 8..13
    samples = [((0.0,), t) for t in (5, 7, 9, 11, 13)]
    out = label_dataset(samples, [DeflectionRecord(10), DeflectionRecord(11)], delta=2)
    assert [s.label for s in out] == [0, 0, 1, 1, 1]
    assert [s.t for s in out] == [5, 7, 9, 11, 13]


def test_no_deflections_gives_all_zero():
    assert label_times([1, 2, 3], [], 4) == [0, 0, 0]


def test_negative_delta_is_rejected():
    with pytest.raises(ConfigError):
        label_times([1], [1], -1)


@pytest.mark.parametrize("delta", [0, 1, 3, 10])
def test_labels_match_brute_force(delta):
    rng = random.Random(delta)
    for _ in range(50):
        times = sorted(rng.sample(range(300), rng.randint(0, 60)))
        ds = [rng.randrange(300) for _ in range(rng.randint(0, 15))]
        assert label_times(times, ds, delta) == brute_force_labels(times, ds, delta)


def test_split_sizes_and_determinism():
    labels = [1 if i % 5 == 0 else 0 for i in range(1000)]
    tr, va = split_indices(labels, 0.7, seed=4)
    assert (len(tr), len(va)) == (700, 300)
    assert sorted(tr + va) == list(range(1000))
    assert split_indices(labels, 0.7, seed=4) == (tr, va)
    assert sum(labels[i] for i in va) == 60  # stratified: 20% of the validation half


def test_tiny_split_keeps_every_class_in_validation():
    labels = [0, 0, 0, 1, 1]
    tr, va = split_indices(labels, 0.99, seed=0)
    assert {labels[i] for i in va} == {0, 1}
    assert tr


def test_single_class_split_warns_and_falls_back(caplog):
    tr, va = split_indices([0] * 10, 0.7, seed=1)
    assert len(tr) == 7 and len(va) == 3
    assert "single label class" in caplog.text


def test_split_dataset_wraps_indices():
    data = [LabeledSample((float(i),), i, i % 2) for i in range(20)]
    tr, va = split_dataset(data, 0.5, seed=2)
    assert len(tr) + len(va) == 20
    assert {s.t for s in tr}.isdisjoint({s.t for s in va})


def _feature_file(path, rows):
    header = ",".join(["t", *FEATURE_COLUMNS, "gen_deflected"])
    lines = [header]
    for t, gen in rows:
        feats = ",".join(repr(float(t + k)) for k in range(len(FEATURE_COLUMNS)))
        lines.append(f"{t},{feats},{'' if gen is None else gen}")
    path.write_text("\n".join(lines) + "\n")


def test_streaming_labeler_agrees_with_parsed_path(tmp_path):
    rows = [(t, t - 3 if t % 17 == 0 else None) for t in range(0, 200, 2)]
    src = tmp_path / "sink_7.csv"
    _feature_file(src, rows)
    samples, deflections = read_feature_csv(src)
    assert all(d.sink == 7 for d in deflections)
    expected = label_dataset(samples, deflections, delta=4)

    dst = tmp_path / "labeled.csv"
    summary = label_feature_file(src, dst, 4)
    assert summary["samples"] == len(expected)
    assert summary["label1"] == sum(s.label for s in expected)
    t, X, y = read_labeled_arrays(dst)
    assert t.tolist() == [s.t for s in expected]
    assert y.tolist() == [s.label for s in expected]
    assert np.array_equal(X, np.array([s.features for s in expected]))
    assert read_labeled_csv(dst) == expected


def test_labeled_csv_round_trip(tmp_path):
    data = [LabeledSample(tuple(0.1 * i + k for k in range(len(FEATURE_COLUMNS))), i, i % 2) for i in range(5)]
    path = tmp_path / "x.csv"
    write_labeled_csv(path, data)
    assert read_labeled_csv(path) == data


def test_empty_labeled_file_gives_empty_arrays(tmp_path):
    path = tmp_path / "empty.csv"
    write_labeled_csv(path, [])
    t, X, y = read_labeled_arrays(path)
    assert len(t) == len(y) == 0 and X.shape == (0, len(FEATURE_COLUMNS))


def test_bad_header_is_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ConfigError):
        read_feature_csv(path)
    with pytest.raises(ConfigError):
        label_feature_file(path, tmp_path / "out.csv", 2)
