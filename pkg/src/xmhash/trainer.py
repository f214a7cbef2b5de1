"""Alternating optimization of the two encoders, the unified codes and the classifier.

Each outer iteration samples a fresh query set, runs ``t_in`` rounds of
mini-batch SGD on the image encoder and then the text encoder, sweeps the code
bits once, and finally solves the classifier in closed form.

Randomness is derived from the master seed and the outer-iteration index, so a
run resumed from a checkpoint replays exactly the same draws.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import encoders
from .dataset import Dataset, SimilarityView, sample_query_set
from .errors import ContractError
from .numerics import load_matrix, save_matrix
from .objective import HyperParams, LossBreakdown, eval_objective, output_grad_rows
from .solvers import (
    CodeMatrix,
    build_d_matrix,
    load_codes,
    mask_outputs,
    save_codes,
    solve_w,
    update_b,
)

log = logging.getLogger(__name__)

_TAG_INIT_B, _TAG_THETA, _TAG_PSI, _TAG_PHI, _TAG_BATCH = range(5)


@dataclass(frozen=True)
class ModelState:
    theta: encoders.MlpParams
    psi: encoders.MlpParams
    b: CodeMatrix
    w: np.ndarray
    seed: int
    iteration: int = 0  # number of completed outer iterations


@dataclass
class IterationRecord:
    iteration: int
    phi_seed: list
    objective: LossBreakdown
    before_b: float
    after_b: float
    after_w: float
    elapsed: float = 0.0

    def to_dict(self, with_timing: bool = False) -> dict:
        d = {
            "iteration": self.iteration,
            "phi_seed": list(self.phi_seed),
            "objective": self.objective.to_dict(),
            "block_checks": {"before_b": self.before_b, "after_b": self.after_b, "after_w": self.after_w},
        }
        if with_timing:
            d["elapsed"] = self.elapsed
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "IterationRecord":
        checks = d["block_checks"]
        obj = d["objective"]
        return cls(
            iteration=d["iteration"],
            phi_seed=list(d["phi_seed"]),
            objective=LossBreakdown(total=obj["total"], terms=dict(obj["terms"])),
            before_b=checks["before_b"],
            after_b=checks["after_b"],
            after_w=checks["after_w"],
            elapsed=d.get("elapsed", 0.0),
        )


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def totals(self) -> list[float]:
        return [r.objective.total for r in self.records]

    def to_json(self) -> str:
        """Deterministic serialization; wall-clock timings are kept out of it."""
        return json.dumps([r.to_dict() for r in self.records], indent=1, sort_keys=True)

    def timings_json(self) -> str:
        return json.dumps([{"iteration": r.iteration, "elapsed": r.elapsed} for r in self.records], indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TrainLog":
        return cls([IterationRecord.from_dict(d) for d in json.loads(text)])


def init_state(dataset: Dataset, hp: HyperParams, seed: int) -> ModelState:
    """Random zero-centred codes, Xavier encoders and a zero classifier."""
    rng = np.random.default_rng([seed, _TAG_INIT_B])
    b = CodeMatrix(np.where(rng.integers(0, 2, size=(dataset.n, hp.k)) == 1, 1.0, -1.0))
    theta = encoders.init_params([dataset.d_x, hp.img_hidden, hp.k], [seed, _TAG_THETA])
    psi = encoders.init_params([dataset.d_y, hp.txt_hidden, hp.k], [seed, _TAG_PSI])
    return ModelState(theta=theta, psi=psi, b=b, w=np.zeros((hp.k, dataset.c)), seed=seed)


def _check_state(state: ModelState, dataset: Dataset, hp: HyperParams) -> None:
    if state.b.n != dataset.n or state.b.k != hp.k:
        raise ContractError(f"codes are {state.b.n} x {state.b.k}, expected {dataset.n} x {hp.k}")
    if state.w.shape != (hp.k, dataset.c):
        raise ContractError(f"classifier is {state.w.shape}, expected {(hp.k, dataset.c)}")
    if state.theta.input_dim != dataset.d_x or state.theta.output_dim != hp.k:
        raise ContractError("image encoder widths disagree with the dataset or k")
    if state.psi.input_dim != dataset.d_y or state.psi.output_dim != hp.k:
        raise ContractError("text encoder widths disagree with the dataset or k")


def seed_scale(hp: HyperParams, batch_rows: int, n: int) -> float:
    """Factor applied to output gradients before backpropagation.

    ``"pairs"`` averages over the batch_rows x n similarity entries the batch
    touches; ``"sum"`` uses the raw gradient of the summed objective.
    """
    if hp.grad_norm == "pairs":
        return 1.0 / (batch_rows * n)
    return 1.0


def _sgd_epoch(params, inputs, other, state: ModelState, sim: SimilarityView, labels, hp: HyperParams, lr, rng):
    m = sim.m
    order = rng.permutation(m)
    for start in range(0, m, hp.batch):
        rows = order[start:start + hp.batch]
        out, trace = encoders.forward(params, inputs[rows])
        seed_grad = output_grad_rows(rows, out, other, state.b.signs, state.w, sim, labels, hp)
        seed_grad *= seed_scale(hp, len(rows), sim.n)
        params = encoders.sgd_step(params, encoders.backward(params, trace, seed_grad), lr)
    return params


def train_epoch_image(state: ModelState, dataset: Dataset, sim: SimilarityView, hp: HyperParams,
                      rng: np.random.Generator, text_out: np.ndarray | None = None) -> ModelState:
    """One pass of mini-batch SGD over the query rows for the image encoder; T, B, W fixed."""
    phi = sim.query_index
    if text_out is None:
        text_out, _ = encoders.forward(state.psi, dataset.text_rows(phi))
    theta = _sgd_epoch(state.theta, dataset.image_rows(phi), text_out, state, sim,
                       dataset.labels, hp, hp.lr_img, rng)
    return replace(state, theta=theta)


def train_epoch_text(state: ModelState, dataset: Dataset, sim: SimilarityView, hp: HyperParams,
                     rng: np.random.Generator, image_out: np.ndarray | None = None) -> ModelState:
    """Mirror of :func:`train_epoch_image` for the text encoder; V, B, W fixed."""
    phi = sim.query_index
    if image_out is None:
        image_out, _ = encoders.forward(state.theta, dataset.image_rows(phi))
    psi = _sgd_epoch(state.psi, dataset.text_rows(phi), image_out, state, sim,
                     dataset.labels, hp, hp.lr_txt, rng)
    return replace(state, psi=psi)


def phi_seed(seed: int, iteration: int) -> list:
    return [seed, _TAG_PHI, iteration]


def outer_iteration(state: ModelState, dataset: Dataset, hp: HyperParams, iteration: int):
    """Run one full outer iteration; returns (new state, IterationRecord)."""
    t0 = time.perf_counter()
    if hp.m > dataset.n:
        raise ContractError(f"m={hp.m} exceeds the database size n={dataset.n}")
    labels = dataset.labels
    seed_phi = phi_seed(state.seed, iteration)
    sim = sample_query_set(dataset, hp.m, seed_phi)
    phi = sim.query_index
    rng = np.random.default_rng([state.seed, _TAG_BATCH, iteration])
    x_phi = dataset.image_rows(phi)
    y_phi = dataset.text_rows(phi)

    for _ in range(hp.t_in):
        text_out, _ = encoders.forward(state.psi, y_phi)
        state = replace(state, theta=_sgd_epoch(state.theta, x_phi, text_out, state, sim, labels, hp, hp.lr_img, rng))
        image_out, _ = encoders.forward(state.theta, x_phi)
        state = replace(state, psi=_sgd_epoch(state.psi, y_phi, image_out, state, sim, labels, hp, hp.lr_txt, rng))

    V, _ = encoders.forward(state.theta, x_phi)
    T, _ = encoders.forward(state.psi, y_phi)
    masked = mask_outputs(V, T, phi, dataset.n)

    before_b = eval_objective(V, T, state.b.signs, state.w, sim, labels, hp).total
    D = build_d_matrix(V, T, masked, state.w, labels, sim, hp)
    b = update_b(state.b, V, T, state.w, D, sim, hp)
    after_b = eval_objective(V, T, b.signs, state.w, sim, labels, hp).total
    w = solve_w(V, T, masked, b, labels, hp)
    objective = eval_objective(V, T, b.signs, w, sim, labels, hp)

    state = replace(state, b=b, w=w, iteration=iteration + 1)
    record = IterationRecord(
        iteration=iteration,
        phi_seed=seed_phi,
        objective=objective,
        before_b=before_b,
        after_b=after_b,
        after_w=objective.total,
        elapsed=time.perf_counter() - t0,
    )
    log.info("iteration %d: objective %.6g (%.2fs)", iteration, objective.total, record.elapsed)
    return state, record


def train(dataset: Dataset, hp: HyperParams, seed: int, state: ModelState | None = None,
          train_log: TrainLog | None = None) -> tuple[ModelState, TrainLog]:
    """Run outer iterations until ``hp.t_out`` are complete.

    Passing a checkpointed ``state`` (and its log) resumes from ``state.iteration``.
    """
    if state is None:
        state = init_state(dataset, hp, seed)
    _check_state(state, dataset, hp)
    train_log = TrainLog(list(train_log.records)) if train_log is not None else TrainLog()
    for it in range(state.iteration, hp.t_out):
        state, record = outer_iteration(state, dataset, hp, it)
        train_log.records.append(record)
    return state, train_log


CHECKPOINT_FILES = ("image_encoder.bin", "text_encoder.bin", "codes.bin", "w.bin", "labels.bin",
                    "state.json", "train_log.json")


def save_checkpoint(directory, state: ModelState, train_log: TrainLog, hp: HyperParams, labels) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    encoders.save_params(d / "image_encoder.bin", state.theta)
    encoders.save_params(d / "text_encoder.bin", state.psi)
    save_codes(d / "codes.bin", state.b)
    save_matrix(d / "w.bin", state.w)
    save_matrix(d / "labels.bin", np.asarray(labels, dtype=np.float64))
    meta = {"seed": state.seed, "iteration": state.iteration, "hyperparams": hp.to_dict()}
    (d / "state.json").write_text(json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")
    (d / "train_log.json").write_text(train_log.to_json(), encoding="utf-8")
    (d / "timings.json").write_text(train_log.timings_json(), encoding="utf-8")


@dataclass(frozen=True)
class Checkpoint:
    state: ModelState
    train_log: TrainLog
    hp: HyperParams
    labels: np.ndarray


def load_checkpoint(directory) -> Checkpoint:
    d = Path(directory)
    missing = [name for name in CHECKPOINT_FILES if not (d / name).exists()]
    if missing:
        raise FileNotFoundError(f"checkpoint {d} is missing: {', '.join(missing)}")
    meta = json.loads((d / "state.json").read_text(encoding="utf-8"))
    state = ModelState(
        theta=encoders.load_params(d / "image_encoder.bin"),
        psi=encoders.load_params(d / "text_encoder.bin"),
        b=load_codes(d / "codes.bin"),
        w=load_matrix(d / "w.bin"),
        seed=int(meta["seed"]),
        iteration=int(meta["iteration"]),
    )
    train_log = TrainLog.from_json((d / "train_log.json").read_text(encoding="utf-8"))
    return Checkpoint(state, train_log, HyperParams.from_dict(meta["hyperparams"]), load_matrix(d / "labels.bin"))
