import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence, TextIO

import numpy as np
from scipy import sparse
from prefect.logging import get_logger

from orthomads.exceptions import LibsvmParseError
from orthomads.svm import Dataset

logger = get_logger("orthomads.data_io")

SyntheticKind = Literal["blobs", "two_moons", "double_ring"]


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    """fold_of[i] is the fold of instance i."""

    fold_of: np.ndarray
    k: int

    def indices(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """(training indices, held-out indices) for one fold."""
        held = self.fold_of == fold
        return np.flatnonzero(~held), np.flatnonzero(held)

    def sizes(self) -> list[int]:
        return np.bincount(self.fold_of, minlength=self.k).tolist()


def _parse_label(token: str, line_number: int) -> int:
    try:
        value = float(token)
    except ValueError:
        raise LibsvmParseError(line_number, f"label {token!r} is not a number") from None
    if not value.is_integer():
        raise LibsvmParseError(line_number, f"label {token!r} is not an integer")
    return int(value)


def parse_libsvm(source: str | Path | TextIO, *, n_features: int | None = None, name: str | None = None) -> Dataset:
    """Read LIBSVM sparse text (``label idx:val ...``) into a dense Dataset.

    Feature indices are 1-based and strictly increasing on each line; the
    width is the largest index seen (or ``n_features`` when larger). Text
    after ``#`` and blank lines are ignored.
    """
    if isinstance(source, Path):
        name = name or source.stem
        with open(source) as stream:
            return parse_libsvm(stream, n_features=n_features, name=name)
    stream = io.StringIO(source) if isinstance(source, str) else source

    labels: list[int] = []
    values: list[float] = []
    col_idx: list[int] = []
    row_ptr = [0]
    widest = 0
    line_number = 0
    for line_number, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        label, *pairs = line.split()
        labels.append(_parse_label(label, line_number))
        last = 0
        for pair in pairs:
            index_text, sep, value_text = pair.partition(":")
            if not sep:
                raise LibsvmParseError(line_number, f"malformed pair {pair!r}")
            try:
                index = int(index_text)
                value = float(value_text)
            except ValueError:
                raise LibsvmParseError(line_number, f"malformed pair {pair!r}") from None
            if index < 1:
                raise LibsvmParseError(line_number, f"feature index {index} must be at least 1")
            if index <= last:
                raise LibsvmParseError(line_number, f"feature index {index} does not increase after {last}")
            last = index
            widest = max(widest, index)
            if value != 0:
                col_idx.append(index - 1)
                values.append(value)
        row_ptr.append(len(col_idx))

    if not labels:
        raise LibsvmParseError(max(line_number, 1), "no instances")

    width = max(n_features or 0, widest)
    matrix = sparse.csr_matrix((values, col_idx, row_ptr), shape=(len(labels), width))
    dataset = Dataset.from_arrays(matrix.toarray(), labels, name=name or "libsvm")
    logger.info("parsed %d instances with %d features and %d classes", len(dataset), width, dataset.n_classes)
    return dataset


def serialize_libsvm(dataset: Dataset) -> str:
    """Inverse of parse_libsvm; the last column is always written to keep the width."""
    lines = []
    p = dataset.n_features
    for label, row in zip(dataset.original_labels, dataset.features):
        cols = [j for j in np.flatnonzero(row)]
        if p and (not cols or cols[-1] != p - 1):
            cols.append(p - 1)
        pairs = " ".join(f"{j + 1}:{float(row[j])!r}" for j in cols)
        lines.append(f"{int(label)} {pairs}".rstrip())
    return "\n".join(lines) + "\n"


def stratified_kfold(labels, k: int, seed: int) -> FoldAssignment:
    """Shuffle each class and deal it round-robin over the folds.

    The dealing offset carries over from one class to the next, so fold
    sizes differ by at most one overall and per class.
    """
    labels = np.asarray(labels)
    d = len(labels)
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    if k > d:
        raise ValueError(f"cannot split {d} instances into {k} folds")

    rng = np.random.default_rng(seed)
    fold_of = np.empty(d, dtype=int)
    offset = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if len(members) < k:
            logger.warning("class %s has %d instances for %d folds; some folds will lack it", c, len(members), k)
        members = rng.permutation(members)
        fold_of[members] = (offset + np.arange(len(members))) % k
        offset = (offset + len(members)) % k
    return FoldAssignment(fold_of=fold_of, k=k)


def stratified_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Hold out about ``test_fraction`` of every class, at least one instance each."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    held = []
    for c in range(dataset.n_classes):
        members = rng.permutation(np.flatnonzero(dataset.labels == c))
        if len(members) < 2:
            continue
        count = min(len(members) - 1, max(1, round(test_fraction * len(members))))
        held.extend(members[:count].tolist())
    test_mask = np.zeros(len(dataset), dtype=bool)
    test_mask[held] = True
    return (
        dataset.subset(np.flatnonzero(~test_mask), name=dataset.name),
        dataset.subset(np.flatnonzero(test_mask), name=f"{dataset.name}-test"),
    )


def align_features(*datasets: Dataset) -> list[Dataset]:
    """Pad every dataset with zero columns up to the widest one."""
    width = max(ds.n_features for ds in datasets)
    aligned = []
    for ds in datasets:
        pad = width - ds.n_features
        features = np.hstack([ds.features, np.zeros((len(ds), pad))]) if pad else ds.features
        aligned.append(Dataset(features, ds.labels, ds.weights, ds.label_table, ds.name))
    return aligned


def conform_labels(dataset: Dataset, label_table: tuple[int, ...]) -> Dataset:
    """Re-express class ids against another file's label table."""
    lookup = {label: i for i, label in enumerate(label_table)}
    unknown = sorted(set(dataset.original_labels.tolist()) - set(lookup))
    if unknown:
        raise ValueError(f"{dataset.name} has labels {unknown} not present in training data")
    ids = np.array([lookup[label] for label in dataset.original_labels.tolist()], dtype=int)
    return Dataset(dataset.features, ids, dataset.weights, tuple(label_table), dataset.name)


def make_synthetic(kind: SyntheticKind, sizes: int | Sequence[int], noise: float, seed: int) -> Dataset:
    """2-D toy datasets; ``sizes`` is per class (an int means two classes)."""
    sizes = [int(sizes)] * 2 if isinstance(sizes, (int, np.integer)) else [int(s) for s in sizes]
    if len(sizes) < 2:
        raise ValueError("synthetic data needs at least two classes")
    if any(s < 4 for s in sizes):
        raise ValueError(f"every class needs at least 4 instances, got {sizes}")
    if noise < 0:
        raise ValueError(f"noise must be non-negative, got {noise}")
    if kind != "blobs" and len(sizes) != 2:
        raise ValueError(f"{kind} is a two-class dataset")

    rng = np.random.default_rng(seed)
    parts = []
    match kind:
        case "blobs":
            for c, size in enumerate(sizes):
                angle = 2.0 * math.pi * c / len(sizes)
                center = 3.0 * np.array([math.cos(angle), math.sin(angle)])
                parts.append(center + noise * rng.standard_normal((size, 2)))
        case "two_moons":
            outer = np.linspace(0.0, math.pi, sizes[0])
            inner = np.linspace(0.0, math.pi, sizes[1])
            parts.append(np.column_stack([np.cos(outer), np.sin(outer)]))
            parts.append(np.column_stack([1.0 - np.cos(inner), 0.5 - np.sin(inner)]))
            parts = [p + noise * rng.standard_normal(p.shape) for p in parts]
        case "double_ring":
            for radius, size in zip((1.0, 2.0), sizes):
                theta = rng.uniform(0.0, 2.0 * math.pi, size)
                ring = radius * np.column_stack([np.cos(theta), np.sin(theta)])
                parts.append(ring + noise * rng.standard_normal(ring.shape))
        case _:
            raise ValueError(f"unknown synthetic dataset {kind!r}")

    labels = np.concatenate([np.full(size, c) for c, size in enumerate(sizes)])
    return Dataset.from_arrays(np.vstack(parts), labels, name=kind)
