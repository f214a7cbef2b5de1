"""Synthetic paired image/text data with cluster-correlated labels.

Each label is a cluster. An instance draws a primary cluster uniformly; with
probability ``mix_prob`` it also takes a second, distinct cluster. Image
features are the mean of the chosen cluster centres plus Gaussian noise. Text
is a bag of words drawn from the chosen clusters' topic blocks of the
vocabulary, mixed with a uniform background whose share grows with ``noise``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, make_record
from .errors import ContractError


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 600
    n_query: int = 67
    d_x: int = 32
    d_y: int = 100
    c: int = 3
    noise: float = 1.0
    mix_prob: float = 0.15
    center_scale: float = 3.0
    doc_length: int = 20


def label_set_probabilities(c: int, mix_prob: float) -> dict[frozenset, float]:
    """Exact distribution of an instance's label set under the generator."""
    probs: dict[frozenset, float] = {}
    for a in range(c):
        probs[frozenset([a])] = (1.0 - mix_prob) / c
        for b in range(c):
            if b != a:
                key = frozenset([a, b])
                probs[key] = probs.get(key, 0.0) + mix_prob / (c * (c - 1))
    return probs


def generate(spec: SyntheticSpec, seed) -> tuple[Dataset, Dataset]:
    """Return (database, queries) drawn from one stream of instances."""
    if spec.c < 2:
        raise ContractError("need at least two clusters")
    if spec.d_y < spec.c:
        raise ContractError("vocabulary must have at least one word per cluster")
    if spec.n < 1 or spec.n_query < 0:
        raise ContractError("need n >= 1 and n_query >= 0")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, spec.center_scale, size=(spec.c, spec.d_x))
    blocks = np.array_split(np.arange(spec.d_y), spec.c)
    topics = np.zeros((spec.c, spec.d_y))
    for a, block in enumerate(blocks):
        topics[a, block] = 1.0 / len(block)
    background = np.full(spec.d_y, 1.0 / spec.d_y)
    bg_share = spec.noise / (1.0 + spec.noise)

    records = []
    for _ in range(spec.n + spec.n_query):
        first = int(rng.integers(spec.c))
        chosen = [first]
        if rng.random() < spec.mix_prob:
            second = int(rng.integers(spec.c - 1))
            chosen.append(second + (second >= first))
        chosen.sort()
        img = centers[chosen].mean(axis=0) + spec.noise * rng.normal(size=spec.d_x)
        word_probs = (1.0 - bg_share) * topics[chosen].mean(axis=0) + bg_share * background
        counts = rng.multinomial(spec.doc_length, word_probs)
        nz = np.flatnonzero(counts)
        records.append(make_record(img, [(int(i), float(counts[i])) for i in nz], chosen, spec.c))
    db = Dataset(records[:spec.n], spec.d_x, spec.d_y, spec.c)
    queries = Dataset(records[spec.n:], spec.d_x, spec.d_y, spec.c)
    return db, queries
