import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xmhash.errors import ContractError, SingularSystemError
from xmhash.numerics import frobenius_sq, matmul, read_matrix, sign, solve_spd, write_matrix
from xmhash.oracles import naive_matmul

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_matmul_identity():
    out = matmul([[1, 0], [0, 1]], [[3, 4], [5, 6]])
    np.testing.assert_array_equal(out, [[3, 4], [5, 6]])


def test_matmul_dot_product():
    assert matmul([[1, 2]], [[3], [4]]).tolist() == [[11.0]]


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
    np.testing.assert_allclose(matmul(a, b), naive_matmul(a, b), rtol=0, atol=1e-12)


def test_matmul_dimension_mismatch():
    with pytest.raises(ContractError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_matmul_associative(p, q, r, s, seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=(p, q)), rng.normal(size=(q, r)), rng.normal(size=(r, s))
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    scale = max(1.0, np.abs(left).max())
    assert np.abs(left - right).max() <= 1e-9 * scale


def test_solve_spd_identity():
    rhs = np.arange(6.0).reshape(3, 2)
    np.testing.assert_allclose(solve_spd(np.eye(3), rhs), rhs, atol=1e-15)


def test_solve_spd_scalar_system():
    np.testing.assert_allclose(solve_spd(2 * np.eye(2), [[4], [6]]), [[2], [3]], atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_solve_spd_residual(seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(6, 6))
    a = m.T @ m + np.eye(6)
    rhs = rng.normal(size=(6, 3))
    x = solve_spd(a, rhs)
    assert np.linalg.norm(a @ x - rhs) / np.linalg.norm(rhs) <= 1e-9


def test_solve_spd_rejects_indefinite():
    with pytest.raises(SingularSystemError):
        solve_spd(np.diag([1.0, -1.0]), np.ones((2, 1)))
    with pytest.raises(SingularSystemError):
        solve_spd(np.zeros((2, 2)), np.ones((2, 1)))


def test_solve_spd_rejects_asymmetric_and_bad_shapes():
    with pytest.raises(ContractError):
        solve_spd([[2.0, 1.0], [0.0, 2.0]], np.ones((2, 1)))
    with pytest.raises(ContractError):
        solve_spd(np.eye(2), np.ones((3, 1)))


def test_frobenius_examples():
    assert frobenius_sq(np.zeros((3, 3))) == 0.0
    assert frobenius_sq([[3, 4]]) == 25.0


def test_frobenius_matches_entrywise_sum():
    a = np.random.default_rng(3).normal(size=(4, 4))
    expected = sum(float(x) ** 2 for x in a.ravel())
    assert abs(frobenius_sq(a) - expected) <= 1e-12


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_frobenius_equals_trace_of_gram(a):
    tr = float(np.trace(a.T @ a))
    assert abs(frobenius_sq(a) - tr) <= 1e-9 * max(1.0, tr)


def test_sign_of_zero_is_negative():
    np.testing.assert_array_equal(sign([-2.0, 0.0, 1e-300, 3.0]), [-1, -1, 1, 1])


def test_matrix_serialization_layout_and_round_trip():
    a = np.array([[1.5, -2.0, 3.0], [0.0, 4.25, -1e-3]])
    buf = io.BytesIO()
    write_matrix(buf, a)
    raw = buf.getvalue()
    assert struct.unpack("<QQ", raw[:16]) == (2, 3)
    assert struct.unpack("<d", raw[16:24]) == (1.5,)
    assert struct.unpack("<d", raw[24:32]) == (-2.0,)
    assert len(raw) == 16 + 6 * 8
    back = read_matrix(io.BytesIO(raw))
    np.testing.assert_array_equal(back, a)


def test_truncated_matrix_file():
    buf = io.BytesIO()
    write_matrix(buf, np.ones((2, 2)))
    with pytest.raises(EOFError):
        read_matrix(io.BytesIO(buf.getvalue()[:-1]))
