import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xmhash import synthetic
from xmhash.dataset import (
    build_similarity_view,
    load_dataset,
    negative_weight,
    sample_query_set,
    save_dataset,
    similarity,
)
from xmhash.errors import ContractError, DatasetParseError


def _write(path, header, records):
    lines = [json.dumps(header)] + [json.dumps(r) for r in records]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@pytest.fixture
def three_records(tmp_path):
    path = tmp_path / "d.jsonl"
    _write(path, {"d_x": 2, "d_y": 5, "c": 3}, [
        {"img": [0.1, 0.2], "bow": [[0, 1], [3, 2]], "labels": [0]},
        {"img": [1.0, -1.0], "bow": [], "labels": [1, 2]},
        {"img": [0.0, 0.5], "bow": [[4, 1.5]], "labels": [2]},
    ])
    return path


def test_load_three_records(three_records):
    ds = load_dataset(three_records)
    assert ds.n == 3 and (ds.d_x, ds.d_y, ds.c) == (2, 5, 3)
    np.testing.assert_array_equal(ds.labels, [[1, 0, 0], [0, 1, 1], [0, 0, 1]])
    np.testing.assert_array_equal(ds.text_rows(np.array([0, 2])), [[1, 0, 0, 2, 0], [0, 0, 0, 0, 1.5]])
    np.testing.assert_array_equal(ds.images[1], [1.0, -1.0])


@pytest.mark.parametrize("bad, fragment", [
    ({"img": [0.1, 0.2], "bow": [], "labels": []}, "no labels"),
    ({"img": [0.1], "bow": [], "labels": [0]}, "image feature"),
    ({"img": [0.1, 0.2], "bow": [[3, 1], [1, 1]], "labels": [0]}, "strictly increasing"),
    ({"img": [0.1, 0.2], "bow": [[9, 1]], "labels": [0]}, "out of range"),
    ({"img": [0.1, 0.2], "bow": [], "labels": [7]}, "out of range"),
    ({"img": [0.1, 0.2], "labels": [0]}, "malformed"),
])
def test_invalid_record_is_reported_with_index(tmp_path, bad, fragment):
    path = tmp_path / "bad.jsonl"
    good = {"img": [0.0, 0.0], "bow": [], "labels": [1]}
    _write(path, {"d_x": 2, "d_y": 5, "c": 3}, [good, bad])
    with pytest.raises(DatasetParseError) as info:
        load_dataset(path)
    assert info.value.record_index == 1
    assert "record 1" in str(info.value) and fragment in str(info.value)


def test_non_json_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"d_x": 1, "d_y": 1, "c": 1}\nnot json\n', encoding="utf-8")
    with pytest.raises(DatasetParseError, match="record 0"):
        load_dataset(path)


def test_round_trip_synthetic(tmp_path):
    db, _ = synthetic.generate(synthetic.SyntheticSpec(n=40, n_query=0), seed=5)
    save_dataset(db, tmp_path / "db.jsonl")
    back = load_dataset(tmp_path / "db.jsonl")
    assert back.n == db.n
    for a, b in zip(db.records, back.records):
        np.testing.assert_array_equal(a.image_feat, b.image_feat)
        np.testing.assert_array_equal(a.bow_indices, b.bow_indices)
        np.testing.assert_array_equal(a.bow_values, b.bow_values)
        np.testing.assert_array_equal(a.labels, b.labels)


def test_similarity_examples():
    assert similarity([1, 0, 1], [0, 0, 1]) == 1
    assert similarity([1, 0], [0, 1]) == -1
    assert similarity([0, 1, 1], [0, 1, 1]) == 1
    with pytest.raises(ContractError):
        similarity([1, 0], [1, 0, 0])


@given(st.lists(st.booleans(), min_size=1, max_size=8), st.data())
def test_similarity_is_symmetric(a, data):
    b = data.draw(st.lists(st.booleans(), min_size=len(a), max_size=len(a)))
    assert similarity(a, b) == similarity(b, a)


def _dataset_from_labels(label_sets, c):
    from xmhash.dataset import Dataset, make_record
    return Dataset([make_record([0.0], [], ls, c) for ls in label_sets], 1, 1, c)


def test_sample_full_set_is_permutation():
    ds = _dataset_from_labels([[0], [1], [0, 1], [1], [0]], 2)
    view = sample_query_set(ds, 5, rng_seed=3)
    assert sorted(view.query_index.tolist()) == list(range(5))


def test_sample_is_deterministic_and_distinct():
    ds = _dataset_from_labels([[i % 3] for i in range(30)], 3)
    a = sample_query_set(ds, 10, rng_seed=42)
    b = sample_query_set(ds, 10, rng_seed=42)
    np.testing.assert_array_equal(a.query_index, b.query_index)
    assert len(set(a.query_index.tolist())) == 10


def test_sample_rejects_bad_m():
    ds = _dataset_from_labels([[0], [1]], 2)
    with pytest.raises(ContractError):
        sample_query_set(ds, 3, 0)
    with pytest.raises(ContractError):
        sample_query_set(ds, 0, 0)


def test_view_values_match_similarity_exhaustively():
    rng = np.random.default_rng(0)
    label_sets = [sorted(set(rng.choice(4, size=rng.integers(1, 3)).tolist())) for _ in range(12)]
    ds = _dataset_from_labels(label_sets, 4)
    view = sample_query_set(ds, 7, rng_seed=1)
    for i, j in itertools.product(range(7), range(12)):
        assert view.values[i, j] == similarity(ds.labels[view.query_index[i]], ds.labels[j])
    for i in range(7):
        assert view.values[i, view.query_index[i]] == 1


def _counting_oracle(labels):
    pos = neg = 0
    for a in labels:
        for b in labels:
            if similarity(a, b) > 0:
                pos += 1
            else:
                neg += 1
    return pos / neg if neg else 1.0


def test_neg_weight_four_instances_one_dissimilar_per_row():
    # a-c and b-d are the only dissimilar pairs
    ds = _dataset_from_labels([[0, 1], [0, 2], [2, 3], [1, 3]], 4)
    view = sample_query_set(ds, 4, rng_seed=0)
    assert (view.values < 0).sum(axis=1).tolist() == [1, 1, 1, 1]
    assert view.neg_weight == _counting_oracle(ds.labels) == 3.0


def test_neg_weight_matches_counting_oracle_random():
    rng = np.random.default_rng(7)
    labels = (rng.random((25, 4)) < 0.3).astype(float)
    labels[labels.sum(axis=1) == 0, 0] = 1
    assert negative_weight(labels) == pytest.approx(_counting_oracle(labels), rel=1e-15)


def test_neg_weight_is_one_for_balanced_and_all_similar():
    assert negative_weight(np.array([[1, 0], [0, 1]])) == 1.0
    assert negative_weight(np.array([[1, 0], [1, 1], [1, 0]])) == 1.0


def test_view_weights():
    view = build_similarity_view(np.array([[1, 0], [0, 1], [0, 1]]), [0, 1])
    # full S has 5 positive and 4 negative entries
    assert view.neg_weight == pytest.approx(5 / 4)
    np.testing.assert_array_equal(view.weights(), [[1, 1.25, 1.25], [1.25, 1, 1]])
    np.testing.assert_array_equal(view.query_block(), [[1, -1], [-1, 1]])
