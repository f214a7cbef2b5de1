"""Shared fixtures and the per-criterion pass/fail report for the acceptance suite."""

import json
import time

import pytest

from xmhash import cli, trainer

ACCEPTANCE_SEED = 0
ACCEPTANCE_TRAIN_FLAGS = ["--k", "16", "--m", "200"]

_criteria = {}  # nodeid -> (number, name)
_outcomes = {}  # number -> (name, passed)


def run_acceptance_pipeline(root):
    """gen-data -> train -> encode -> eval on the 3-cluster synthetic set; returns timings."""
    data, ckpt, codes, metrics = (root / d for d in ("data", "ckpt", "codes", "metrics"))
    seed = str(ACCEPTANCE_SEED)
    t0 = time.perf_counter()
    assert cli.main(["gen-data", "--out", str(data), "--n", "600", "--d-x", "32", "--d-y", "100",
                     "--c", "3", "--seed", seed]) == 0
    t1 = time.perf_counter()
    assert cli.main(["train", "--data", str(data / "database.jsonl"), "--out", str(ckpt), "--seed", seed]
                    + ACCEPTANCE_TRAIN_FLAGS) == 0
    t2 = time.perf_counter()
    assert cli.main(["encode", "--ckpt", str(ckpt), "--data", str(data / "queries.jsonl"), "--out", str(codes)]) == 0
    assert cli.main(["eval", "--ckpt", str(ckpt), "--data", str(data / "queries.jsonl"), "--out", str(metrics)]) == 0
    t3 = time.perf_counter()
    return {"gen": t1 - t0, "train": t2 - t1, "eval": t3 - t2}


class AcceptanceRun:
    def __init__(self, root):
        self.root = root
        self.timings = run_acceptance_pipeline(root)
        self.checkpoint = trainer.load_checkpoint(root / "ckpt")
        self.metrics = json.loads((root / "metrics" / "metrics.json").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def acceptance_run(tmp_path_factory):
    return AcceptanceRun(tmp_path_factory.mktemp("acceptance"))


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            _criteria[item.nodeid] = tuple(marker.args)


def pytest_runtest_logreport(report):
    crit = _criteria.get(report.nodeid)
    if crit is None:
        return
    number, name = crit
    failed = report.failed
    prev = _outcomes.get(number, (name, True))
    _outcomes[number] = (name, prev[1] and not failed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        name, passed = _outcomes[number]
        terminalreporter.write_line(f"criterion {number} ({name}): {'PASS' if passed else 'FAIL'}")
