"""Out-of-sample hashing, Hamming ranking over packed codes, and retrieval metrics.

A database item is relevant to a query when the two share at least one label.
Rankings sort by Hamming distance and break ties by ascending database index.
"""

from __future__ import annotations

import csv
import io
import json
from fractions import Fraction
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import encoders
from .errors import ContractError
from .solvers import CodeMatrix


def hash_codes(params: encoders.MlpParams, inputs: np.ndarray) -> CodeMatrix:
    """Codes for a batch of inputs: +1 where the encoder output is strictly positive."""
    out, _ = encoders.forward(params, inputs)
    return CodeMatrix(np.where(out > 0, 1.0, -1.0))


def hash_query(params: encoders.MlpParams, x) -> np.ndarray:
    """Packed code (ceil(k/64) uint64 words) for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ContractError("hash_query takes a single input vector")
    return hash_codes(params, x[None, :]).packed[0]


def hamming(a, b) -> int:
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    if a.shape != b.shape:
        raise ContractError(f"packed codes differ in length: {a.shape} vs {b.shape}")
    return int(np.bitwise_count(a ^ b).sum())


@dataclass(frozen=True)
class RetrievalIndex:
    codes: CodeMatrix
    labels: np.ndarray  # n x c, 0/1

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.float64)
        if labels.ndim != 2 or labels.shape[0] != self.codes.n:
            raise ContractError("labels must have one row per database code")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.codes.n

    @property
    def k(self) -> int:
        return self.codes.k

    def distances(self, query_packed) -> np.ndarray:
        q = np.asarray(query_packed, dtype=np.uint64)
        if q.shape != (self.codes.packed.shape[1],):
            raise ContractError("query code length does not match the index")
        return np.bitwise_count(self.codes.packed ^ q).sum(axis=1).astype(np.int64)

    def relevance(self, query_labels) -> np.ndarray:
        return (self.labels @ np.asarray(query_labels, dtype=np.float64)) > 0


@dataclass(frozen=True)
class QueryResult:
    order: np.ndarray
    distances: np.ndarray  # distances in ranked order


@dataclass(frozen=True)
class Query:
    code: np.ndarray  # packed
    labels: np.ndarray


def rank(index: RetrievalIndex, query_packed) -> QueryResult:
    dist = index.distances(query_packed)
    order = np.argsort(dist, kind="stable")
    return QueryResult(order=order, distances=dist[order])


def make_queries(codes: CodeMatrix, labels) -> list[Query]:
    labels = np.asarray(labels, dtype=np.float64)
    return [Query(codes.packed[i], labels[i]) for i in range(codes.n)]


def _ranked_relevance(index: RetrievalIndex, query: Query) -> np.ndarray:
    return index.relevance(query.labels)[rank(index, query.code).order]


def average_precision(relevant_in_rank_order: Sequence[bool]) -> float:
    """Mean of precision@r over the ranks r of relevant items; 0 if none are relevant.

    Accumulated as an exact rational and rounded once.
    """
    positions = np.flatnonzero(np.asarray(relevant_in_rank_order, dtype=bool)) + 1
    if positions.size == 0:
        return 0.0
    total = sum(Fraction(hit, int(pos)) for hit, pos in enumerate(positions, start=1))
    return float(total / positions.size)


def mean_average_precision(index: RetrievalIndex, queries: Sequence[Query]) -> float:
    if len(queries) == 0:
        raise ContractError("MAP needs at least one query")
    return float(np.mean([average_precision(_ranked_relevance(index, q)) for q in queries]))


def precision_at(index: RetrievalIndex, queries: Sequence[Query], n_cut: int) -> float:
    if not 1 <= n_cut <= index.n:
        raise ContractError(f"n_cut={n_cut} must lie in [1, {index.n}]")
    if len(queries) == 0:
        raise ContractError("precision_at needs at least one query")
    return float(np.mean([_ranked_relevance(index, q)[:n_cut].sum() / n_cut for q in queries]))


def pr_curve(index: RetrievalIndex, queries: Sequence[Query]) -> list[tuple[int, float, float]]:
    """Hash-lookup precision/recall for radii 0..k, macro-averaged over queries.

    An empty retrieved set counts as precision 1; a query with no relevant
    items counts as recall 0.
    """
    k = index.k
    precision = np.zeros(k + 1)
    recall = np.zeros(k + 1)
    for q in queries:
        dist = index.distances(q.code)
        rel = index.relevance(q.labels)
        n_rel = int(rel.sum())
        retrieved = np.cumsum(np.bincount(dist, minlength=k + 1)[:k + 1])
        hits = np.cumsum(np.bincount(dist[rel], minlength=k + 1)[:k + 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            precision += np.where(retrieved > 0, hits / np.maximum(retrieved, 1), 1.0)
        recall += hits / n_rel if n_rel else 0.0
    nq = max(len(queries), 1)
    return [(r, float(precision[r] / nq), float(recall[r] / nq)) for r in range(k + 1)]


def evaluate(index: RetrievalIndex, queries: Sequence[Query], p_cuts: Iterable[int]) -> dict:
    """Metrics as ``{"map", "p_at_n": {n: value}, "pr_curve": [[r, p, rec], ...]}``."""
    return {
        "map": mean_average_precision(index, queries),
        "p_at_n": {str(n): precision_at(index, queries, n) for n in p_cuts},
        "pr_curve": [[r, p, rec] for r, p, rec in pr_curve(index, queries)],
    }


def pr_curve_csv(curve) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["radius", "precision", "recall"])
    for r, p, rec in curve:
        writer.writerow([r, repr(float(p)), repr(float(rec))])
    return buf.getvalue()


def metrics_json(metrics: dict) -> str:
    return json.dumps(metrics, indent=1, sort_keys=True)


__all__ = [
    "Query", "QueryResult", "RetrievalIndex", "average_precision", "evaluate", "hamming",
    "hash_codes", "hash_query", "make_queries", "mean_average_precision", "metrics_json",
    "pr_curve", "pr_curve_csv", "precision_at", "rank",
]
