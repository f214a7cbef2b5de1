"""Built-in correctness checks against the brute-force oracles."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import encoders, oracles, retrieval
from .dataset import build_similarity_view
from .objective import CONSISTENCY_GRAD_SCALE, HyperParams, eval_objective, grad_t, grad_v
from .solvers import (
    CodeMatrix,
    build_d_matrix,
    dcc_update_bit,
    mask_outputs,
    solve_w,
    surrogate_objective,
    w_objective,
    w_system,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass
class Instance:
    V: np.ndarray
    T: np.ndarray
    B: np.ndarray
    W: np.ndarray
    labels: np.ndarray
    sim: object
    hp: HyperParams


def random_labels(rng: np.random.Generator, n: int, c: int) -> np.ndarray:
    labels = (rng.random((n, c)) < 0.4).astype(float)
    for row in labels:
        if not row.any():
            row[rng.integers(c)] = 1.0
    return labels


def random_instance(rng: np.random.Generator, n: int, m: int, k: int, c: int, hp: HyperParams | None = None) -> Instance:
    """A small random problem with hyper-parameters of comparable magnitudes."""
    labels = random_labels(rng, n, c)
    phi = rng.choice(n, size=m, replace=False)
    if hp is None:
        hp = HyperParams(alpha=rng.uniform(0.5, 3), beta=rng.uniform(0.5, 3), gamma=rng.uniform(0.5, 3),
                         eta=rng.uniform(0.5, 3), mu=rng.uniform(0.5, 3), k=k, m=m)
    return Instance(
        V=rng.uniform(-0.95, 0.95, size=(m, k)),
        T=rng.uniform(-0.95, 0.95, size=(m, k)),
        B=np.where(rng.random((n, k)) < 0.5, -1.0, 1.0),
        W=rng.normal(size=(k, c)),
        labels=labels,
        sim=build_similarity_view(labels, phi),
        hp=hp,
    )


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric)) / max(1.0, float(np.max(np.abs(analytic)))))


def fd_output_grad(which: str, i: int, inst: Instance, h: float = 1e-6) -> np.ndarray:
    """Central difference of the objective w.r.t. row ``i`` of V or T.

    The consistency weight is multiplied by CONSISTENCY_GRAD_SCALE so the
    oracle matches the printed gradient convention.
    """
    hp = replace(inst.hp, gamma=inst.hp.gamma * CONSISTENCY_GRAD_SCALE)

    def f(row):
        V, T = inst.V.copy(), inst.T.copy()
        (V if which == "v" else T)[i] = row
        return eval_objective(V, T, inst.B, inst.W, inst.sim, inst.labels, hp).total

    start = (inst.V if which == "v" else inst.T)[i]
    return oracles.central_difference(f, start, h)


def check_output_gradients(n_instances: int = 20, seed: int = 0, tol: float = 1e-6,
                           grad_v_fn: Callable = grad_v, grad_t_fn: Callable = grad_t) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        n, k, c = int(rng.integers(2, 7)), int(rng.integers(1, 5)), int(rng.integers(1, 4))
        m = int(rng.integers(1, min(n, 4) + 1))
        inst = random_instance(rng, n, m, k, c)
        for i in range(m):
            args = (inst.V, inst.T, inst.B, inst.W, inst.sim, inst.labels, inst.hp)
            worst = max(worst, _rel_err(grad_v_fn(i, *args), fd_output_grad("v", i, inst)))
            worst = max(worst, _rel_err(grad_t_fn(i, *args), fd_output_grad("t", i, inst)))
    return CheckResult("output_gradients", worst <= tol, f"max relative error {worst:.2e} (tol {tol:g})")


def check_encoder_gradients(n_nets: int = 10, seed: int = 0, tol: float = 1e-5, h: float = 1e-5) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(n_nets):
        sizes = [int(s) for s in rng.integers(1, 9, size=3)]
        params = encoders.init_params(sizes, [seed, trial])
        params = encoders.MlpParams(tuple(
            encoders.Layer(layer.weight, rng.normal(scale=0.3, size=layer.bias.shape), layer.activation)
            for layer in params.layers))
        x = rng.normal(size=(int(rng.integers(1, 5)), sizes[0]))
        seed_grad = rng.normal(size=(x.shape[0], sizes[-1]))
        out, trace = encoders.forward(params, x)
        grads = encoders.backward(params, trace, seed_grad)
        for li, layer in enumerate(params.layers):
            for attr in ("weight", "bias"):
                def loss(value, li=li, attr=attr):
                    layers = list(params.layers)
                    kw = {"weight": layers[li].weight, "bias": layers[li].bias, attr: value}
                    layers[li] = encoders.Layer(kw["weight"], kw["bias"], layers[li].activation)
                    y, _ = encoders.forward(encoders.MlpParams(tuple(layers)), x)
                    return float(np.sum(y * seed_grad))
                numeric = oracles.central_difference(loss, getattr(layer, attr), h)
                analytic = getattr(grads[li], attr)
                err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
                worst = max(worst, float(err.max()))
    return CheckResult("encoder_gradients", worst <= tol, f"max relative error {worst:.2e} (tol {tol:g})")


def dcc_to_fixed_point(B: CodeMatrix, V, T, W, D, sim, hp, max_sweeps: int = 50):
    """Sweep until no bit changes; returns (codes, surrogate value after every column update)."""
    trace = [surrogate_objective(B, V, T, W, D, sim, hp)]
    for _ in range(max_sweeps):
        before = B
        for col in range(B.k):
            B = dcc_update_bit(B, col, V, T, W, D, sim, hp)
            trace.append(surrogate_objective(B, V, T, W, D, sim, hp))
        if B == before:
            break
    return B, trace


def check_dcc_exhaustive(n_instances: int = 5, seed: int = 0, n: int = 4, k: int = 3) -> CheckResult:
    """Coordinate-wise optimality of the DCC fixed point against full enumeration of each column."""
    rng = np.random.default_rng(seed)
    problems = []
    for _ in range(n_instances):
        inst = random_instance(rng, n, int(rng.integers(1, n + 1)), k, 2)
        masked = mask_outputs(inst.V, inst.T, inst.sim.query_index, n)
        D = build_d_matrix(inst.V, inst.T, masked, inst.W, inst.labels, inst.sim, inst.hp)
        args = (inst.V, inst.T, inst.W, D, inst.sim, inst.hp)
        B, trace = dcc_to_fixed_point(CodeMatrix(inst.B), *args)
        if any(b > a + 1e-9 * max(1.0, abs(a)) for a, b in zip(trace, trace[1:])):
            problems.append("surrogate increased during a column update")
        best = trace[-1]
        slack = 1e-9 * max(1.0, abs(best))
        for candidate in oracles.all_sign_matrices(n, k):
            changed_cols = np.flatnonzero((candidate != B.signs).any(axis=0))
            if len(changed_cols) == 1 and surrogate_objective(candidate, *args) < best - slack:
                problems.append(f"changing column {changed_cols[0]} lowers the objective at the fixed point")
                break
    return CheckResult("dcc_exhaustive", not problems, "; ".join(problems) or
                       f"{n_instances} instances, all 2^{n * k} code matrices enumerated")


def check_w_optimality(n_instances: int = 5, seed: int = 0, n_perturb: int = 100) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_res = 0.0
    lowered = 0
    for _ in range(n_instances):
        inst = random_instance(rng, 8, 5, 4, 3)
        masked = mask_outputs(inst.V, inst.T, inst.sim.query_index, 8)
        W = solve_w(inst.V, inst.T, masked, inst.B, inst.labels, inst.hp)
        lhs, rhs = w_system(inst.V, inst.T, masked, inst.B, inst.labels, inst.hp)
        worst_res = max(worst_res, float(np.linalg.norm(lhs @ W - rhs) / np.linalg.norm(rhs)))
        phi = inst.sim.query_index
        base = w_objective(inst.V, inst.T, inst.B, W, inst.labels, phi, inst.hp)
        for _ in range(n_perturb):
            pert = W + 1e-3 * rng.normal(size=W.shape)
            if w_objective(inst.V, inst.T, inst.B, pert, inst.labels, phi, inst.hp) < base:
                lowered += 1
    ok = worst_res <= 1e-8 and lowered == 0
    return CheckResult("w_optimality", ok, f"max relative residual {worst_res:.2e}; {lowered} perturbations lowered the objective")


def check_metrics(seed: int = 0, n: int = 30, k: int = 8, n_queries: int = 10) -> CheckResult:
    rng = np.random.default_rng(seed)
    db = CodeMatrix(np.where(rng.random((n, k)) < 0.5, -1.0, 1.0))
    db_labels = random_labels(rng, n, 3)
    q = CodeMatrix(np.where(rng.random((n_queries, k)) < 0.5, -1.0, 1.0))
    q_labels = random_labels(rng, n_queries, 3)
    index = retrieval.RetrievalIndex(db, db_labels)
    queries = retrieval.make_queries(q, q_labels)
    naive_q = list(zip(q.signs, q_labels))
    errs = [abs(retrieval.mean_average_precision(index, queries) - oracles.naive_map(db.signs, db_labels, naive_q))]
    for cut in (1, 5, n):
        errs.append(abs(retrieval.precision_at(index, queries, cut)
                        - oracles.naive_precision_at(db.signs, db_labels, naive_q, cut)))
    fast = retrieval.pr_curve(index, queries)
    slow = oracles.naive_pr_curve(db.signs, db_labels, naive_q, k)
    errs += [abs(a[1] - b[1]) + abs(a[2] - b[2]) for a, b in zip(fast, slow)]
    hand = retrieval.average_precision([1, 0, 1])
    ok = max(errs) <= 1e-12 and hand == 5 / 6
    return CheckResult("metric_oracles", ok, f"max deviation {max(errs):.1e}; AP[1,0,1] = {hand!r}")


def run_selfcheck(grad_v_fn: Callable = grad_v, grad_t_fn: Callable = grad_t) -> list[CheckResult]:
    return [
        check_output_gradients(grad_v_fn=grad_v_fn, grad_t_fn=grad_t_fn),
        check_encoder_gradients(),
        check_dcc_exhaustive(),
        check_w_optimality(),
        check_metrics(),
    ]
