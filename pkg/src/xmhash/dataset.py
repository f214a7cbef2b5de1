"""Paired image/text instances, label similarity and query sampling.

File format (UTF-8 JSON lines)::

    {"d_x": 32, "d_y": 100, "c": 3}
    {"img": [...], "bow": [[index, value], ...], "labels": [0, 2]}
    ...

The first line is the header; each later line is one instance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, DatasetParseError


@dataclass(frozen=True)
class InstanceRecord:
    image_feat: np.ndarray
    bow_indices: np.ndarray
    bow_values: np.ndarray
    labels: np.ndarray  # 0/1 vector of length c

    def dense_bow(self, d_y: int) -> np.ndarray:
        out = np.zeros(d_y)
        out[self.bow_indices] = self.bow_values
        return out


def _validate_record(i: int, rec: InstanceRecord, d_x: int, d_y: int, c: int) -> None:
    if rec.image_feat.shape != (d_x,):
        raise DatasetParseError(i, f"image feature has {rec.image_feat.size} dims, expected {d_x}")
    if not np.all(np.isfinite(rec.image_feat)):
        raise DatasetParseError(i, "image feature contains non-finite values")
    idx = rec.bow_indices
    if idx.size:
        if np.any(np.diff(idx) <= 0):
            raise DatasetParseError(i, "bow indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= d_y:
            raise DatasetParseError(i, f"bow index out of range [0, {d_y})")
    if np.any(rec.bow_values < 0) or not np.all(np.isfinite(rec.bow_values)):
        raise DatasetParseError(i, "bow values must be finite and nonnegative")
    if rec.labels.shape != (c,):
        raise DatasetParseError(i, f"label vector has {rec.labels.size} entries, expected {c}")
    if not rec.labels.any():
        raise DatasetParseError(i, "record has no labels set")


class Dataset:
    """An ordered, immutable collection of instance records with shared dimensions."""

    def __init__(self, records: Sequence[InstanceRecord], d_x: int, d_y: int, c: int):
        for i, rec in enumerate(records):
            _validate_record(i, rec, d_x, d_y, c)
        self.records = tuple(records)
        self.d_x = d_x
        self.d_y = d_y
        self.c = c
        self._images = np.array([r.image_feat for r in self.records], dtype=np.float64).reshape(-1, d_x)
        self._labels = np.array([r.labels for r in self.records], dtype=np.float64).reshape(-1, c)
        self._images.flags.writeable = False
        self._labels.flags.writeable = False

    @property
    def n(self) -> int:
        return len(self.records)

    @property
    def images(self) -> np.ndarray:
        """n x d_x image feature matrix (read-only)."""
        return self._images

    @property
    def labels(self) -> np.ndarray:
        """n x c 0/1 label matrix (read-only)."""
        return self._labels

    def image_rows(self, rows: np.ndarray) -> np.ndarray:
        return self._images[rows]

    def text_rows(self, rows: np.ndarray) -> np.ndarray:
        """Densify the BoW vectors of ``rows`` into a len(rows) x d_y matrix."""
        out = np.zeros((len(rows), self.d_y))
        for r, i in enumerate(rows):
            rec = self.records[i]
            out[r, rec.bow_indices] = rec.bow_values
        return out

    def subset(self, rows: Sequence[int]) -> "Dataset":
        return Dataset([self.records[i] for i in rows], self.d_x, self.d_y, self.c)


def make_record(image_feat, bow: Sequence[tuple[int, float]], label_indices: Sequence[int], c: int) -> InstanceRecord:
    labels = np.zeros(c, dtype=np.int8)
    labels[list(label_indices)] = 1
    if bow:
        idx, val = zip(*bow)
    else:
        idx, val = (), ()
    return InstanceRecord(
        image_feat=np.asarray(image_feat, dtype=np.float64),
        bow_indices=np.asarray(idx, dtype=np.int64),
        bow_values=np.asarray(val, dtype=np.float64),
        labels=labels,
    )


def _parse_record(i: int, line: str, c: int) -> InstanceRecord:
    try:
        obj = json.loads(line)
        img = obj["img"]
        bow = [(int(p[0]), float(p[1])) for p in obj["bow"]]
        label_idx = [int(x) for x in obj["labels"]]
    except (ValueError, KeyError, TypeError, IndexError) as exc:
        raise DatasetParseError(i, f"malformed line ({exc})") from exc
    if any(x < 0 or x >= c for x in label_idx):
        raise DatasetParseError(i, f"label index out of range [0, {c})")
    try:
        return make_record(img, bow, label_idx, c)
    except ValueError as exc:
        raise DatasetParseError(i, f"malformed values ({exc})") from exc


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines:
        raise DatasetParseError(-1, "missing header line")
    try:
        header = json.loads(lines[0])
        d_x, d_y, c = int(header["d_x"]), int(header["d_y"]), int(header["c"])
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetParseError(-1, f"bad header ({exc})") from exc
    records = [_parse_record(i, ln, c) for i, ln in enumerate(lines[1:])]
    return Dataset(records, d_x, d_y, c)


def _fmt(x: float):
    return int(x) if float(x).is_integer() else float(x)


def save_dataset(dataset: Dataset, path) -> None:
    lines = [json.dumps({"d_x": dataset.d_x, "d_y": dataset.d_y, "c": dataset.c})]
    for rec in dataset.records:
        lines.append(json.dumps({
            "img": [float(v) for v in rec.image_feat],
            "bow": [[int(i), _fmt(v)] for i, v in zip(rec.bow_indices, rec.bow_values)],
            "labels": [int(j) for j in np.flatnonzero(rec.labels)],
        }))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def similarity(a, b) -> int:
    """+1 if the two label vectors share at least one label, else -1."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ContractError(f"label vectors differ in length: {a.shape} vs {b.shape}")
    return 1 if np.any((a != 0) & (b != 0)) else -1


def similarity_matrix(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Pairwise +/-1 similarity between two 0/1 label matrices."""
    return np.where(rows @ cols.T > 0, 1.0, -1.0)


def negative_weight(labels: np.ndarray) -> float:
    """#(+1) / #(-1) over the full n x n similarity implied by ``labels``.

    Counts over distinct label patterns, so the n x n matrix is never built.
    Returns 1.0 when there are no dissimilar pairs.
    """
    patterns, counts = np.unique(np.asarray(labels) != 0, axis=0, return_counts=True)
    counts = counts.astype(np.int64)
    overlap = (patterns.astype(np.int64) @ patterns.T.astype(np.int64)) > 0
    pair_counts = np.outer(counts, counts)
    n_pos = int(pair_counts[overlap].sum())
    n_neg = int(pair_counts[~overlap].sum())
    if n_neg == 0:
        return 1.0
    return n_pos / n_neg


@dataclass(frozen=True)
class SimilarityView:
    """Rows of the similarity matrix for the sampled query indices."""

    query_index: np.ndarray  # m distinct database indices
    values: np.ndarray  # m x n, entries +/-1
    neg_weight: float

    @property
    def m(self) -> int:
        return len(self.query_index)

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def weights(self) -> np.ndarray:
        """Per-entry imbalance weights: ``neg_weight`` on -1 entries, 1 elsewhere."""
        return np.where(self.values < 0, self.neg_weight, 1.0)

    def query_block(self) -> np.ndarray:
        """m x m similarities among the sampled queries (columns at the query indices)."""
        return self.values[:, self.query_index]


def build_similarity_view(labels: np.ndarray, query_index, neg_weight: float | None = None) -> SimilarityView:
    labels = np.asarray(labels, dtype=np.float64)
    query_index = np.asarray(query_index, dtype=np.int64)
    if neg_weight is None:
        neg_weight = negative_weight(labels)
    values = similarity_matrix(labels[query_index], labels)
    values.flags.writeable = False
    query_index.flags.writeable = False
    return SimilarityView(query_index=query_index, values=values, neg_weight=float(neg_weight))


def sample_query_set(dataset: Dataset, m: int, rng_seed) -> SimilarityView:
    """Draw ``m`` distinct query indices uniformly without replacement."""
    if not 1 <= m <= dataset.n:
        raise ContractError(f"query sample size m={m} must lie in [1, {dataset.n}]")
    rng = np.random.default_rng(rng_seed)
    phi = rng.choice(dataset.n, size=m, replace=False)
    return build_similarity_view(dataset.labels, phi)
