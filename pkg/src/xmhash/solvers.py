"""Discrete code update (cyclic, one bit column at a time) and the closed-form classifier solve."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from .dataset import SimilarityView
from .errors import ContractError
from .numerics import solve_spd
from .objective import HyperParams

_CODE_HEADER = struct.Struct("<QQ")


def pack_signs(signs: np.ndarray) -> np.ndarray:
    """Pack an n x k +/-1 matrix into n x ceil(k/64) uint64 words.

    Bit ``j % 64`` of word ``j // 64`` is set iff entry ``j`` is +1.
    """
    signs = np.asarray(signs)
    n, k = signs.shape
    n_words = (k + 63) // 64
    bits = np.zeros((n, n_words * 64), dtype=np.uint64)
    bits[:, :k] = signs > 0
    shifts = np.arange(64, dtype=np.uint64)
    return np.bitwise_or.reduce(bits.reshape(n, n_words, 64) << shifts, axis=2)


def unpack_signs(packed: np.ndarray, k: int) -> np.ndarray:
    packed = np.asarray(packed, dtype=np.uint64)
    n, n_words = packed.shape
    if n_words != (k + 63) // 64:
        raise ContractError(f"{n_words} words cannot hold exactly {k} bits")
    shifts = np.arange(64, dtype=np.uint64)
    bits = (packed[:, :, None] >> shifts) & np.uint64(1)
    return np.where(bits.reshape(n, n_words * 64)[:, :k] == 1, 1.0, -1.0)


@dataclass(frozen=True, eq=False)
class CodeMatrix:
    """n x k binary codes held as +/-1 floats, with the packed form derived on construction."""

    signs: np.ndarray

    def __post_init__(self):
        signs = np.array(self.signs, dtype=np.float64)
        if signs.ndim != 2:
            raise ContractError("codes must be a 2-D matrix")
        if not np.all(np.abs(signs) == 1.0):
            raise ContractError("code entries must be -1 or +1")
        signs.flags.writeable = False
        packed = pack_signs(signs)
        packed.flags.writeable = False
        object.__setattr__(self, "signs", signs)
        object.__setattr__(self, "packed", packed)

    @property
    def n(self) -> int:
        return self.signs.shape[0]

    @property
    def k(self) -> int:
        return self.signs.shape[1]

    def with_column(self, col: int, values: np.ndarray) -> "CodeMatrix":
        signs = self.signs.copy()
        signs[:, col] = values
        return CodeMatrix(signs)

    def __eq__(self, other) -> bool:
        return isinstance(other, CodeMatrix) and np.array_equal(self.packed, other.packed) and self.k == other.k

    @classmethod
    def from_packed(cls, packed: np.ndarray, k: int) -> "CodeMatrix":
        return cls(unpack_signs(packed, k))


def write_codes(f: BinaryIO, codes: CodeMatrix) -> None:
    f.write(_CODE_HEADER.pack(codes.n, codes.k))
    f.write(codes.packed.astype("<u8").tobytes(order="C"))


def read_codes(f: BinaryIO) -> CodeMatrix:
    n, k = _CODE_HEADER.unpack(f.read(_CODE_HEADER.size))
    n_words = (k + 63) // 64
    payload = f.read(n * n_words * 8)
    if len(payload) != n * n_words * 8:
        raise EOFError("truncated code file")
    packed = np.frombuffer(payload, dtype="<u8").astype(np.uint64).reshape(n, n_words)
    return CodeMatrix.from_packed(packed, k)


def save_codes(path, codes: CodeMatrix) -> None:
    with open(path, "wb") as f:
        write_codes(f, codes)


def load_codes(path) -> CodeMatrix:
    with open(path, "rb") as f:
        return read_codes(f)


@dataclass(frozen=True)
class MaskedOutputs:
    """Encoder outputs scattered into n x k matrices; rows outside the query set are zero."""

    v_ring: np.ndarray
    t_ring: np.ndarray


def mask_outputs(V, T, query_index, n: int) -> MaskedOutputs:
    V = np.asarray(V, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    v_ring = np.zeros((n, V.shape[1]))
    t_ring = np.zeros((n, T.shape[1]))
    v_ring[query_index] = V
    t_ring[query_index] = T
    return MaskedOutputs(v_ring, t_ring)


def build_d_matrix(V, T, masked: MaskedOutputs, W, labels, sim: SimilarityView, hp: HyperParams) -> np.ndarray:
    """k x n linear coefficient matrix of the code subproblem (weighted similarities)."""
    V = np.asarray(V, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    m, n = sim.values.shape
    k = V.shape[1]
    if V.shape != (m, k) or T.shape != (m, k):
        raise ContractError("V and T must be m x k")
    if masked.v_ring.shape != (n, k) or masked.t_ring.shape != (n, k):
        raise ContractError("masked outputs must be n x k")
    if W.shape != (k, labels.shape[1]) or labels.shape[0] != n:
        raise ContractError("W / labels shapes inconsistent")
    ws = sim.weights() * sim.values
    return (hp.gamma * (masked.v_ring + masked.t_ring).T
            + 2.0 * k * (V + T).T @ ws
            + 2.0 * hp.beta * W @ labels.T)


def surrogate_objective(B, V, T, W, D, sim: SimilarityView, hp: HyperParams) -> float:
    """B-dependent part of the objective, up to an additive constant.

    sum_ij w_ij ((v_i.b_j)^2 + (t_i.b_j)^2) + beta ||B W||^2 - tr(B D)
    """
    B = np.asarray(getattr(B, "signs", B), dtype=np.float64)
    wt = sim.weights()
    quad = np.sum(wt * (V @ B.T) ** 2) + np.sum(wt * (T @ B.T) ** 2)
    return float(quad + hp.beta * np.sum((B @ W) ** 2) - np.sum(B * D.T))


def dcc_argument(B: CodeMatrix, col: int, V, T, W, D, sim: SimilarityView, hp: HyperParams) -> np.ndarray:
    """Per-row coefficient of bit ``col`` in the code subproblem with the other bits fixed."""
    if not 0 <= col < B.k:
        raise ContractError(f"bit index {col} out of range [0, {B.k})")
    signs = B.signs
    wt = sim.weights()
    rest = signs.copy()
    rest[:, col] = 0.0
    v_col = V[:, col]
    t_col = T[:, col]
    q = 2.0 * (wt * (V @ rest.T)).T @ v_col
    q += 2.0 * (wt * (T @ rest.T)).T @ t_col
    q += 2.0 * hp.beta * rest @ (W @ W[col])
    return q - D[col]


def dcc_update_bit(B: CodeMatrix, col: int, V, T, W, D, sim: SimilarityView, hp: HyperParams) -> CodeMatrix:
    """Replace column ``col`` by its exact minimizer ``-sign(argument)`` (sign(0) = -1)."""
    arg = dcc_argument(B, col, V, T, W, D, sim, hp)
    return B.with_column(col, np.where(arg > 0, -1.0, 1.0))


def update_b(B: CodeMatrix, V, T, W, D, sim: SimilarityView, hp: HyperParams) -> CodeMatrix:
    """One cyclic sweep over bit columns 0..k-1."""
    for col in range(B.k):
        B = dcc_update_bit(B, col, V, T, W, D, sim, hp)
    return B


def w_system(V, T, masked: MaskedOutputs, B, labels, hp: HyperParams) -> tuple[np.ndarray, np.ndarray]:
    """Normal-equation matrix and right-hand side of the classifier subproblem."""
    B = np.asarray(getattr(B, "signs", B), dtype=np.float64)
    k = B.shape[1]
    lhs = hp.alpha * (V.T @ V + T.T @ T) + hp.beta * (B.T @ B) + hp.eta * np.eye(k)
    rhs = (hp.alpha * (masked.v_ring + masked.t_ring) + hp.beta * B).T @ np.asarray(labels, dtype=np.float64)
    return lhs, rhs


def solve_w(V, T, masked: MaskedOutputs, B, labels, hp: HyperParams) -> np.ndarray:
    lhs, rhs = w_system(V, T, masked, B, labels, hp)
    return solve_spd(lhs, rhs)


def w_objective(V, T, B, W, labels, query_index, hp: HyperParams) -> float:
    """The W-dependent objective terms (classification losses plus ridge penalty)."""
    B = np.asarray(getattr(B, "signs", B), dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    L_phi = labels[query_index]
    return float(hp.alpha * (np.sum((V @ W - L_phi) ** 2) + np.sum((T @ W - L_phi) ** 2))
                 + hp.beta * np.sum((B @ W - labels) ** 2) + hp.eta * np.sum(W * W))
