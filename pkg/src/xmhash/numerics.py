"""Dense float64 matrix helpers and the little-endian matrix file format.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64, row-major.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ContractError, SingularSystemError

_HEADER = struct.Struct("<QQ")


def as_matrix(a) -> np.ndarray:
    """Coerce ``a`` to a C-contiguous 2-D float64 array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError(f"expected a 2-D matrix, got {m.ndim} dimension(s)")
    return m


def sign(x: np.ndarray) -> np.ndarray:
    """Elementwise sign with ``sign(0) == -1``: +1 only for strictly positive entries."""
    return np.where(np.asarray(x) > 0, 1.0, -1.0)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul: {a.shape} x {b.shape} do not chain")
    return a @ b


def frobenius_sq(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sum(a * a))


def solve_spd(a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = rhs`` for symmetric positive-definite ``a`` via Cholesky.

    Raises:
        ContractError: ``a`` is not square, not symmetric, or rhs rows differ.
        SingularSystemError: a non-positive pivot appears during factorization.
    """
    a = as_matrix(a)
    rhs = as_matrix(rhs)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ContractError(f"solve_spd: matrix must be square, got {a.shape}")
    if rhs.shape[0] != n:
        raise ContractError(f"solve_spd: rhs has {rhs.shape[0]} rows, expected {n}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-10 * scale):
        raise ContractError("solve_spd: matrix is not symmetric")
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("solve_spd: matrix is not positive definite") from exc
    y = solve_triangular(lower, rhs, lower=True)
    return solve_triangular(lower.T, y, lower=False)


def write_matrix(f: BinaryIO, a: np.ndarray) -> None:
    """Write ``a`` as (rows u64, cols u64) followed by float64 values, little-endian."""
    a = as_matrix(a)
    f.write(_HEADER.pack(*a.shape))
    f.write(a.astype("<f8").tobytes(order="C"))


def read_matrix(f: BinaryIO) -> np.ndarray:
    header = f.read(_HEADER.size)
    if len(header) != _HEADER.size:
        raise EOFError("truncated matrix header")
    rows, cols = _HEADER.unpack(header)
    nbytes = rows * cols * 8
    payload = f.read(nbytes)
    if len(payload) != nbytes:
        raise EOFError(f"truncated matrix payload: expected {nbytes} bytes")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(rows, cols)


def save_matrix(path, a: np.ndarray) -> None:
    with open(path, "wb") as f:
        write_matrix(f, a)


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_matrix(f)
