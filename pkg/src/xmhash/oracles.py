"""Slow, independent reference implementations used by the self-check and the tests.

Nothing here shares code paths with the vectorized implementations it checks:
everything is written as explicit Python loops over scalars.
"""

from __future__ import annotations

import itertools

import numpy as np


def naive_matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for t in range(a.shape[1]):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def _dot(x, y) -> float:
    return sum(float(p) * float(q) for p, q in zip(x, y))


def _share(a, b) -> bool:
    return any(p != 0 and q != 0 for p, q in zip(a, b))


def scalar_objective_terms(V, T, B, W, labels, phi, neg_weight) -> dict:
    """Each raw objective term by scalar loops, with weights derived from the labels."""
    V, T, B, W, labels = (np.asarray(a, dtype=float) for a in (V, T, B, W, labels))
    m, k = V.shape
    n = B.shape[0]
    c = labels.shape[1]

    def s_w(i_db, j_db):
        s = 1.0 if _share(labels[i_db], labels[j_db]) else -1.0
        return s, (neg_weight if s < 0 else 1.0)

    vb = tb = vt = 0.0
    for i in range(m):
        for j in range(n):
            s, w = s_w(phi[i], j)
            vb += w * (_dot(V[i], B[j]) - k * s) ** 2
            tb += w * (_dot(T[i], B[j]) - k * s) ** 2
        for j in range(m):
            s, w = s_w(phi[i], phi[j])
            vt += w * (_dot(V[i], T[j]) - k * s) ** 2

    def cls(X, Y):
        tot = 0.0
        for i in range(X.shape[0]):
            for j in range(c):
                tot += (_dot(X[i], W[:, j]) - Y[i, j]) ** 2
        return tot

    L_phi = labels[list(phi)]
    consistency = 0.0
    for i in range(m):
        for t in range(k):
            consistency += (B[phi[i], t] - 0.5 * (V[i, t] + T[i, t])) ** 2
    return {
        "vb_term": vb, "tb_term": tb, "vt_term": vt,
        "cls_v": cls(V, L_phi), "cls_t": cls(T, L_phi), "cls_b": cls(B, labels),
        "w_reg": sum(float(x) ** 2 for x in W.ravel()),
        "consistency": consistency,
    }


def scalar_d_matrix(V, T, W, labels, phi, neg_weight, gamma, beta) -> np.ndarray:
    V, T, W, labels = (np.asarray(a, dtype=float) for a in (V, T, W, labels))
    m, k = V.shape
    n = labels.shape[0]
    D = np.zeros((k, n))
    for t in range(k):
        for j in range(n):
            val = 0.0
            for i in range(m):
                if phi[i] == j:
                    val += gamma * (V[i, t] + T[i, t])
                s = 1.0 if _share(labels[phi[i]], labels[j]) else -1.0
                w = neg_weight if s < 0 else 1.0
                val += 2.0 * k * (V[i, t] + T[i, t]) * w * s
            val += 2.0 * beta * _dot(W[t], labels[j])
            D[t, j] = val
    return D


def central_difference(f, x: np.ndarray, h: float) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (any shape)."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def all_sign_matrices(n: int, k: int):
    """Every n x k +/-1 matrix (2**(n*k) of them)."""
    for bits in itertools.product((-1.0, 1.0), repeat=n * k):
        yield np.array(bits).reshape(n, k)


def all_sign_vectors(n: int):
    for bits in itertools.product((-1.0, 1.0), repeat=n):
        yield np.array(bits)


def naive_hamming(a_signs, b_signs) -> int:
    return sum(1 for p, q in zip(a_signs, b_signs) if p != q)


def naive_rank(db_signs, query_signs) -> list[int]:
    keyed = [(naive_hamming(row, query_signs), j) for j, row in enumerate(db_signs)]
    return [j for _, j in sorted(keyed)]


def naive_relevant(db_labels, query_labels) -> list[bool]:
    return [_share(row, query_labels) for row in db_labels]


def naive_average_precision(relevance_in_order) -> float:
    hits = 0
    precisions = []
    for r, rel in enumerate(relevance_in_order, start=1):
        if rel:
            hits += 1
            precisions.append(hits / r)
    return sum(precisions) / len(precisions) if precisions else 0.0


def naive_map(db_signs, db_labels, queries) -> float:
    aps = []
    for q_signs, q_labels in queries:
        rel = naive_relevant(db_labels, q_labels)
        aps.append(naive_average_precision([rel[j] for j in naive_rank(db_signs, q_signs)]))
    return sum(aps) / len(aps)


def naive_precision_at(db_signs, db_labels, queries, n_cut: int) -> float:
    vals = []
    for q_signs, q_labels in queries:
        rel = naive_relevant(db_labels, q_labels)
        top = naive_rank(db_signs, q_signs)[:n_cut]
        vals.append(sum(1 for j in top if rel[j]) / n_cut)
    return sum(vals) / len(vals)


def naive_pr_curve(db_signs, db_labels, queries, k: int) -> list[tuple[int, float, float]]:
    out = []
    for radius in range(k + 1):
        p_sum = r_sum = 0.0
        for q_signs, q_labels in queries:
            rel = {j for j, flag in enumerate(naive_relevant(db_labels, q_labels)) if flag}
            got = {j for j, row in enumerate(db_signs) if naive_hamming(row, q_signs) <= radius}
            hit = len(rel & got)
            p_sum += hit / len(got) if got else 1.0
            r_sum += hit / len(rel) if rel else 0.0
        out.append((radius, p_sum / len(queries), r_sum / len(queries)))
    return out
