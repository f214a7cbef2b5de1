from dataclasses import replace

import numpy as np
import pytest

from xmhash import encoders, synthetic, trainer
from xmhash.dataset import sample_query_set
from xmhash.errors import ContractError
from xmhash.objective import HyperParams, eval_objective, grad_t, grad_v

HP = HyperParams(k=8, m=20, t_out=3, t_in=2, batch=8, img_hidden=16, txt_hidden=16)


@pytest.fixture(scope="module")
def data():
    db, _ = synthetic.generate(synthetic.SyntheticSpec(n=60, n_query=0, d_x=8, d_y=20), seed=1)
    return db


def _same_params(a, b):
    return all(np.array_equal(x.weight, y.weight) and np.array_equal(x.bias, y.bias)
               for x, y in zip(a.layers, b.layers))


def _same_state(a, b):
    return (_same_params(a.theta, b.theta) and _same_params(a.psi, b.psi) and a.b == b.b
            and np.array_equal(a.w, b.w) and a.iteration == b.iteration)


def test_init_deterministic(data):
    a, b = trainer.init_state(data, HP, 4), trainer.init_state(data, HP, 4)
    assert _same_state(a, b)
    assert not _same_state(a, trainer.init_state(data, HP, 5))
    assert not a.w.any() and a.w.shape == (8, data.c)


def test_init_codes_zero_centred():
    from xmhash.dataset import Dataset, make_record
    n = 10_000
    big = Dataset([make_record([0.0], [], [0], 1)] * n, 1, 1, 1)
    state = trainer.init_state(big, HyperParams(k=16, img_hidden=2, txt_hidden=2), 0)
    assert np.abs(state.b.signs.mean(axis=0)).max() <= 3 / np.sqrt(n)


def test_zero_lr_leaves_encoders(data):
    hp = replace(HP, lr_img=0.0, lr_txt=0.0)
    state = trainer.init_state(data, hp, 0)
    sim = sample_query_set(data, hp.m, 0)
    rng = np.random.default_rng(0)
    assert _same_params(trainer.train_epoch_image(state, data, sim, hp, rng).theta, state.theta)
    assert _same_params(trainer.train_epoch_text(state, data, sim, hp, rng).psi, state.psi)


@pytest.mark.parametrize("grad_norm", ["pairs", "sum"])
def test_single_row_epoch_matches_composed_step(data, grad_norm):
    hp = replace(HP, m=1, lr_img=0.3, lr_txt=0.2, grad_norm=grad_norm)
    state = trainer.init_state(data, hp, 2)
    state = replace(state, w=np.random.default_rng(0).normal(size=state.w.shape))
    sim = sample_query_set(data, 1, 7)
    phi = sim.query_index
    x, y = data.image_rows(phi), data.text_rows(phi)
    V, trace_v = encoders.forward(state.theta, x)
    T, trace_t = encoders.forward(state.psi, y)
    scale = 1.0 / data.n if grad_norm == "pairs" else 1.0
    args = (state.b.signs, state.w, sim, data.labels, hp)

    g = grad_v(0, V, T, *args)[None, :] * scale
    expected = encoders.sgd_step(state.theta, encoders.backward(state.theta, trace_v, g), hp.lr_img)
    got = trainer.train_epoch_image(state, data, sim, hp, np.random.default_rng(0)).theta
    for a, b in zip(got.layers, expected.layers):
        np.testing.assert_allclose(a.weight, b.weight, rtol=0, atol=1e-14)

    g = grad_t(0, V, T, *args)[None, :] * scale
    expected = encoders.sgd_step(state.psi, encoders.backward(state.psi, trace_t, g), hp.lr_txt)
    got = trainer.train_epoch_text(state, data, sim, hp, np.random.default_rng(0)).psi
    for a, b in zip(got.layers, expected.layers):
        np.testing.assert_allclose(a.weight, b.weight, rtol=0, atol=1e-14)


def _descent(data, which):
    hp = replace(HP, lr_img=4e-3, lr_txt=4e-3)
    state = trainer.init_state(data, hp, 3)
    sim = sample_query_set(data, hp.m, 3)
    phi = sim.query_index
    x, y = data.image_rows(phi), data.text_rows(phi)

    def objective(s):
        V, _ = encoders.forward(s.theta, x)
        T, _ = encoders.forward(s.psi, y)
        return eval_objective(V, T, s.b.signs, s.w, sim, data.labels, hp).total

    start = objective(state)
    rng = np.random.default_rng(0)
    step = trainer.train_epoch_image if which == "image" else trainer.train_epoch_text
    for _ in range(50):
        state = step(state, data, sim, hp, rng)
    return start, objective(state)


@pytest.mark.parametrize("which", ["image", "text"])
def test_epochs_decrease_objective(data, which):
    start, end = _descent(data, which)
    assert end < start


def test_no_inner_epochs_only_updates_codes_and_classifier(data):
    hp = replace(HP, t_in=0, t_out=1)
    init = trainer.init_state(data, hp, 0)
    state, log = trainer.train(data, hp, 0)
    assert _same_params(state.theta, init.theta) and _same_params(state.psi, init.psi)
    assert state.b != init.b and state.w.any()
    assert len(log.records) == 1


def test_zero_outer_iterations(data):
    hp = replace(HP, t_out=0)
    state, log = trainer.train(data, hp, 6)
    assert _same_state(state, trainer.init_state(data, hp, 6)) and log.records == []


def test_training_deterministic(data):
    a_state, a_log = trainer.train(data, HP, 9)
    b_state, b_log = trainer.train(data, HP, 9)
    assert _same_state(a_state, b_state)
    assert a_log.to_json() == b_log.to_json()


def test_resume_equals_uninterrupted_run(data, tmp_path):
    full_state, full_log = trainer.train(data, replace(HP, t_out=4), 2)
    half_state, half_log = trainer.train(data, replace(HP, t_out=2), 2)
    trainer.save_checkpoint(tmp_path, half_state, half_log, HP, data.labels)
    ckpt = trainer.load_checkpoint(tmp_path)
    assert _same_state(ckpt.state, half_state)
    state, log = trainer.train(data, replace(HP, t_out=4), 2, state=ckpt.state, train_log=ckpt.train_log)
    assert _same_state(state, full_state)
    assert log.to_json() == full_log.to_json()


def test_invariants_and_block_monotonicity(data):
    state, log = trainer.train(data, replace(HP, t_out=5), 11)
    assert set(np.unique(state.b.signs)) <= {-1.0, 1.0}
    assert np.all(np.isfinite(state.w))
    assert [r.iteration for r in log.records] == list(range(5))
    for r in log.records:
        assert r.after_b <= r.before_b
        assert r.after_w <= r.after_b
        assert r.after_w == r.objective.total


def test_query_size_larger_than_database(data):
    with pytest.raises(ContractError):
        trainer.train(data, replace(HP, m=data.n + 1), 0)


def test_state_shape_checks(data):
    state = trainer.init_state(data, HP, 0)
    with pytest.raises(ContractError):
        trainer.train(data, replace(HP, k=4), 0, state=state)


def test_checkpoint_contents_and_missing_files(data, tmp_path):
    state, log = trainer.train(data, replace(HP, t_out=1), 0)
    trainer.save_checkpoint(tmp_path, state, log, HP, data.labels)
    for name in trainer.CHECKPOINT_FILES:
        assert (tmp_path / name).exists()
    ckpt = trainer.load_checkpoint(tmp_path)
    assert ckpt.hp == HP and np.array_equal(ckpt.labels, data.labels)
    (tmp_path / "codes.bin").unlink()
    with pytest.raises(FileNotFoundError, match="codes.bin"):
        trainer.load_checkpoint(tmp_path)
