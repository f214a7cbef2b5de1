"""Relaxed joint objective and its gradients with respect to encoder outputs.

Notation (all dense float64):

* ``V``, ``T``: m x k image / text encoder outputs on the sampled query rows.
* ``B``: n x k unified codes, entries +/-1.
* ``W``: k x c linear classifier on codes.
* ``labels``: n x c 0/1 label matrix of the whole database.

Every residual against the similarity matrix is multiplied by its
class-imbalance weight (``sim.neg_weight`` on dissimilar pairs, 1 otherwise).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import SimilarityView
from .errors import ContractError

# The printed gradient of the consistency term is gamma * (v + t - 2b), which is
# twice the derivative of gamma * ||b - (v + t) / 2||^2. The printed form is kept.
CONSISTENCY_GRAD_SCALE = 2.0

GRAD_NORMS = ("pairs", "sum")


@dataclass(frozen=True)
class HyperParams:
    alpha: float = 50.0
    beta: float = 1.0
    gamma: float = 200.0
    eta: float = 50.0  # > 0 keeps the classifier system definite; 0 may fail in solve_w
    mu: float = 50.0
    k: int = 16
    m: int = 2000
    t_out: int = 30
    t_in: int = 3
    batch: int = 64
    lr_img: float = 1e-4
    lr_txt: float = 4e-3
    img_hidden: int = 256
    txt_hidden: int = 512
    grad_norm: str = "pairs"  # "pairs" or "sum"; scaling of encoder output gradients

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "eta", "mu"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be nonnegative")
        if self.k < 1 or self.m < 1 or self.batch < 1:
            raise ContractError("k, m and batch must be at least 1")
        if self.t_out < 0 or self.t_in < 0:
            raise ContractError("iteration counts must be nonnegative")
        if self.lr_img < 0 or self.lr_txt < 0:
            raise ContractError("learning rates must be nonnegative")
        if self.img_hidden < 1 or self.txt_hidden < 1:
            raise ContractError("hidden widths must be at least 1")
        if self.grad_norm not in GRAD_NORMS:
            raise ContractError(f"grad_norm must be one of {GRAD_NORMS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ContractError(f"unknown hyper-parameter(s): {sorted(unknown)}")
        coerced = {}
        for key, value in d.items():
            if key == "grad_norm":
                coerced[key] = str(value)
                continue
            typ = int if known[key].type in ("int", int) else float
            if typ is int and isinstance(value, float) and not value.is_integer():
                raise ContractError(f"{key} must be an integer")
            coerced[key] = typ(value)
        return cls(**coerced)


TERM_NAMES = ("vb_term", "tb_term", "vt_term", "cls_v", "cls_t", "cls_b", "w_reg", "consistency")


@dataclass(frozen=True)
class LossBreakdown:
    """Raw (unscaled) objective terms and their hyper-parameter-weighted total."""

    total: float
    terms: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"total": self.total, "terms": dict(self.terms)}


def term_multipliers(hp: HyperParams) -> dict:
    return {
        "vb_term": 1.0, "tb_term": 1.0, "vt_term": hp.mu,
        "cls_v": hp.alpha, "cls_t": hp.alpha, "cls_b": hp.beta,
        "w_reg": hp.eta, "consistency": hp.gamma,
    }


def _check_shapes(V, T, B, W, sim: SimilarityView, labels) -> None:
    m, n = sim.values.shape
    if V.shape != T.shape or V.shape[0] != m:
        raise ContractError(f"V {V.shape} and T {T.shape} must both have {m} rows")
    k = V.shape[1]
    if B.shape != (n, k):
        raise ContractError(f"B must be {n} x {k}, got {B.shape}")
    if labels.shape[0] != n or W.shape != (k, labels.shape[1]):
        raise ContractError(f"W {W.shape} / labels {labels.shape} inconsistent with k={k}, n={n}")


def eval_objective(V, T, B, W, sim: SimilarityView, labels, hp: HyperParams) -> LossBreakdown:
    V, T, B, W = (np.asarray(a, dtype=np.float64) for a in (V, T, B, W))
    labels = np.asarray(labels, dtype=np.float64)
    _check_shapes(V, T, B, W, sim, labels)
    k = V.shape[1]
    phi = sim.query_index
    S = sim.values
    wt = sim.weights()
    S_qq = sim.query_block()
    wt_qq = wt[:, phi]
    L_phi = labels[phi]
    terms = {
        "vb_term": float(np.sum(wt * (V @ B.T - k * S) ** 2)),
        "tb_term": float(np.sum(wt * (T @ B.T - k * S) ** 2)),
        "vt_term": float(np.sum(wt_qq * (V @ T.T - k * S_qq) ** 2)),
        "cls_v": float(np.sum((V @ W - L_phi) ** 2)),
        "cls_t": float(np.sum((T @ W - L_phi) ** 2)),
        "cls_b": float(np.sum((B @ W - labels) ** 2)),
        "w_reg": float(np.sum(W * W)),
        "consistency": float(np.sum((B[phi] - 0.5 * (V + T)) ** 2)),
    }
    mult = term_multipliers(hp)
    total = float(sum(mult[name] * terms[name] for name in TERM_NAMES))
    return LossBreakdown(total=total, terms=terms)


def output_grad_rows(rows, X_rows, other, B, W, sim: SimilarityView, labels, hp: HyperParams) -> np.ndarray:
    """Gradient of the objective w.r.t. one modality's outputs on query ``rows``.

    ``X_rows`` holds that modality's current outputs for ``rows`` (len(rows) x k);
    ``other`` is the other modality's outputs on all m query rows, held fixed.
    """
    rows = np.asarray(rows, dtype=np.int64)
    X = np.asarray(X_rows, dtype=np.float64)
    other = np.asarray(other, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    k = X.shape[1]
    phi = sim.query_index
    S = sim.values[rows]
    wt = np.where(S < 0, sim.neg_weight, 1.0)
    S_qq = S[:, phi]
    wt_qq = wt[:, phi]
    grad = 2.0 * (wt * (X @ B.T - k * S)) @ B
    grad += 2.0 * hp.mu * (wt_qq * (X @ other.T - k * S_qq)) @ other
    grad += 2.0 * hp.alpha * (X @ W - labels[phi[rows]]) @ W.T
    grad += 0.5 * CONSISTENCY_GRAD_SCALE * hp.gamma * (X + other[rows] - 2.0 * B[phi[rows]])
    return grad


def _check_row(i: int, m: int) -> None:
    if not 0 <= i < m:
        raise ContractError(f"query row {i} out of range [0, {m})")


def grad_v(i: int, V, T, B, W, sim: SimilarityView, labels, hp: HyperParams) -> np.ndarray:
    V = np.asarray(V, dtype=np.float64)
    _check_row(i, V.shape[0])
    return output_grad_rows([i], V[[i]], T, B, W, sim, labels, hp)[0]


def grad_t(i: int, V, T, B, W, sim: SimilarityView, labels, hp: HyperParams) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    _check_row(i, T.shape[0])
    return output_grad_rows([i], T[[i]], V, B, W, sim, labels, hp)[0]
