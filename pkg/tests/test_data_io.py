import io

import numpy as np
import pytest

from orthomads.data_io import (
    align_features,
    conform_labels,
    make_synthetic,
    parse_libsvm,
    serialize_libsvm,
    stratified_kfold,
    stratified_split,
)
from orthomads.exceptions import LibsvmParseError


def test_parse_dense_view_of_sparse_lines() -> None:
    data = parse_libsvm("1 1:0.5 3:2.0\n-1 2:1.0\n")
    assert data.features.tolist() == [[0.5, 0.0, 2.0], [0.0, 1.0, 0.0]]
    assert data.original_labels.tolist() == [1, -1]
    assert data.weights.tolist() == [0.5, 0.5]


def test_parse_accepts_comments_blank_lines_and_plus_labels() -> None:
    text = "# header\n+1 1:1  # trailing\n\n-1 1:-1\n2.0 2:3\n"
    data = parse_libsvm(io.StringIO(text))
    assert data.original_labels.tolist() == [1, -1, 2]
    assert data.features.shape == (3, 2)


def test_parse_keeps_instances_without_features() -> None:
    data = parse_libsvm("1\n-1 2:4\n")
    assert data.features.tolist() == [[0.0, 0.0], [0.0, 4.0]]


@pytest.mark.parametrize(
    ("text", "line"),
    [
        ("1 1:0.5\n-1 2:1 2:3\n", 2),
        ("1 3:0.5 1:1\n", 1),
        ("1 1:0.5\n-1 abc\n", 2),
        ("1 0:1\n", 1),
        ("x 1:1\n", 1),
        ("1.5 1:1\n", 1),
        ("1 1:zz\n", 1),
    ],
)
def test_parse_errors_carry_the_line_number(text: str, line: int) -> None:
    with pytest.raises(LibsvmParseError) as excinfo:
        parse_libsvm(text)
    assert excinfo.value.line_number == line
    assert str(excinfo.value).startswith(f"line {line}:")


def test_parse_rejects_empty_input() -> None:
    with pytest.raises(LibsvmParseError, match="no instances"):
        parse_libsvm("")


def test_parse_reads_files(tmp_path) -> None:
    path = tmp_path / "tiny.svm"
    path.write_text("1 1:1\n2 2:1\n")
    data = parse_libsvm(path)
    assert data.name == "tiny"
    assert data.n_classes == 2


def test_serialize_round_trips_exactly() -> None:
    original = parse_libsvm("3 1:0.1 4:1e-300\n-1 2:0.30000000000000004\n3 1:-7\n")
    again = parse_libsvm(serialize_libsvm(original))
    assert np.array_equal(again.features, original.features)
    assert again.original_labels.tolist() == original.original_labels.tolist()


def test_serialize_keeps_trailing_zero_columns() -> None:
    data = align_features(parse_libsvm("1 1:1\n-1 1:2\n"), parse_libsvm("1 3:1\n-1 1:1\n"))[0]
    assert data.n_features == 3
    assert parse_libsvm(serialize_libsvm(data)).n_features == 3


def test_parse_counts_explicit_zeros_toward_the_width() -> None:
    data = parse_libsvm("1 1:1 3:0\n-1 2:1\n")
    assert data.n_features == 3
    assert data.features.tolist() == [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]


def _random_corpus(rng: np.random.Generator, lines: int) -> str:
    rows = []
    for i in range(lines):
        label = (-1, 1)[i] if i < 2 else int(rng.choice([-1, 1, 2, 7]))
        count = int(rng.integers(0, 8))
        indices = np.sort(rng.choice(np.arange(1, 41), size=count, replace=False))
        pairs = []
        for index in indices:
            value = 0.0 if rng.random() < 0.1 else float(rng.normal(scale=10.0 ** rng.integers(-5, 5)))
            pairs.append(f"{index}:{value!r}")
        rows.append(" ".join([str(label), *pairs]))
    return "\n".join(rows) + "\n"


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_serialize_round_trips_a_random_corpus(seed: int) -> None:
    original = parse_libsvm(_random_corpus(np.random.default_rng(seed), 1000))
    again = parse_libsvm(serialize_libsvm(original))
    assert again.n_features == original.n_features
    assert np.array_equal(again.features, original.features)
    assert again.original_labels.tolist() == original.original_labels.tolist()
    assert again.label_table == original.label_table


def test_kfold_deals_a_single_class_evenly() -> None:
    folds = stratified_kfold([0] * 7, k=3, seed=0)
    assert sorted(folds.sizes()) == [2, 2, 3]


def test_kfold_puts_one_of_each_class_in_every_fold() -> None:
    labels = np.array([0, 0, 0, 1, 1, 1])
    folds = stratified_kfold(labels, k=3, seed=5)
    for f in range(3):
        _, held = folds.indices(f)
        assert sorted(labels[held].tolist()) == [0, 1]


def test_kfold_balances_folds_and_classes() -> None:
    labels = np.repeat([0, 1, 2], [11, 7, 5])
    folds = stratified_kfold(labels, k=3, seed=9)
    sizes = folds.sizes()
    assert max(sizes) - min(sizes) <= 1
    for c in range(3):
        per_fold = np.bincount(folds.fold_of[labels == c], minlength=3)
        assert per_fold.max() - per_fold.min() <= 1


def test_kfold_stratifies_random_label_sets() -> None:
    rng = np.random.default_rng(11)
    for case in range(500):
        classes = int(rng.integers(1, 5))
        labels = rng.integers(0, classes, size=int(rng.integers(2, 60)))
        k = int(rng.integers(2, len(labels) + 1))
        folds = stratified_kfold(labels, k=k, seed=case)
        assert folds.fold_of.shape == labels.shape
        assert set(folds.fold_of.tolist()) <= set(range(k))
        sizes = folds.sizes()
        assert sum(sizes) == len(labels) and max(sizes) - min(sizes) <= 1
        for c in np.unique(labels):
            per_fold = np.bincount(folds.fold_of[labels == c], minlength=k)
            assert per_fold.max() - per_fold.min() <= 1
        held = [set(folds.indices(f)[1].tolist()) for f in range(k)]
        assert sum(len(h) for h in held) == len(labels)
        assert set().union(*held) == set(range(len(labels)))
        for f in range(k):
            train, test = folds.indices(f)
            assert not set(train.tolist()) & set(test.tolist())



def test_kfold_is_deterministic_per_seed() -> None:
    labels = np.repeat([0, 1], 10)
    a = stratified_kfold(labels, 3, seed=1)
    b = stratified_kfold(labels, 3, seed=1)
    assert np.array_equal(a.fold_of, b.fold_of)


@pytest.mark.parametrize("k", [1, 8])
def test_kfold_rejects_impossible_fold_counts(k: int) -> None:
    with pytest.raises(ValueError):
        stratified_kfold([0, 1, 0, 1, 0, 1, 0], k=k, seed=0)


def test_split_holds_out_every_class() -> None:
    data = make_synthetic("blobs", [10, 20, 30], 0.2, seed=0)
    train, test = stratified_split(data, 0.3, seed=0)
    assert len(train) + len(test) == 60
    assert sorted(set(test.labels.tolist())) == [0, 1, 2]
    assert len(test) == 18


def test_conform_labels_maps_onto_training_ids() -> None:
    train = parse_libsvm("5 1:1\n-1 1:2\n7 1:3\n")
    test = parse_libsvm("7 1:1\n5 1:2\n")
    conformed = conform_labels(test, train.label_table)
    assert conformed.labels.tolist() == [2, 1]
    with pytest.raises(ValueError):
        conform_labels(parse_libsvm("9 1:1\n5 1:1\n"), train.label_table)


@pytest.mark.parametrize("kind", ["blobs", "two_moons", "double_ring"])
def test_synthetic_datasets_are_seeded(kind: str) -> None:
    a = make_synthetic(kind, 25, 0.1, seed=3)
    b = make_synthetic(kind, 25, 0.1, seed=3)
    assert np.array_equal(a.features, b.features)
    assert a.features.shape == (50, 2)
    assert np.bincount(a.labels).tolist() == [25, 25]


def test_synthetic_rejects_tiny_classes_and_unknown_kinds() -> None:
    with pytest.raises(ValueError):
        make_synthetic("blobs", 3, 0.1, seed=0)
    with pytest.raises(ValueError):
        make_synthetic("spirals", 10, 0.1, seed=0)
    with pytest.raises(ValueError):
        make_synthetic("two_moons", [10, 10, 10], 0.1, seed=0)
