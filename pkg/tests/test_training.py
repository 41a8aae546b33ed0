import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdsrnn.errors import ConfigurationError, ContractError, TrainingDivergedError
from hdsrnn.model import HDSRNN, ModelConfig, load_checkpoint
from hdsrnn.pipeline import Windows, make_panel, split_windows
from hdsrnn.tensor import Tensor
from hdsrnn.training import (Adam, AdamState, TrainConfig, TrainReport, adam_step, derive_seed, expand_grid, fit,
                             grid_search, train_epoch)


def scalar_adam(grads, w0, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    w, m, v = w0, 0.0, 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(w)
    return out


def small_data(length=240, T=5, tau=2, n=2, seed=0):
    g = np.random.default_rng(seed)
    t = np.arange(length)
    vals = np.stack([np.sin(2 * np.pi * t / 24 + k) + 0.1 * g.standard_normal(length) for k in range(n)])
    return split_windows(make_panel(vals), T, tau, 0)


def small_config(**kw):
    base = dict(n_sensors=2, encoder_length=5, decoder_length=2, hidden_dim=4, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


# --- Adam ------------------------------------------------------------------------


def test_adam_zero_gradient_is_noop():
    w = np.array([1.0, -2.0])
    adam_step(AdamState(), {"w": w}, {"w": np.zeros(2)})
    np.testing.assert_array_equal(w, [1.0, -2.0])


@pytest.mark.parametrize("g", [1e-6, 0.3, 50.0, -7.0])
def test_adam_first_step_is_lr_sized(g):
    w = np.array([0.0])
    adam_step(AdamState(lr=1e-3), {"w": w}, {"w": np.array([g])})
    assert abs(abs(w[0]) - 1e-3) < 1e-3 * 1e-2
    assert np.sign(w[0]) == -np.sign(g)


def test_adam_matches_scalar_oracle_on_square():
    w = np.array([1.0])
    state = AdamState()
    grads = []
    for _ in range(10):
        grads.append(2 * w[0])
        adam_step(state, {"w": w}, {"w": 2 * w.copy()})
    ref = scalar_adam(grads, 1.0)
    assert abs(w[0] - ref[-1]) < 1e-12


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30), st.floats(-5, 5))
def test_adam_matches_scalar_oracle_for_any_sequence(grads, w0):
    w = np.array([w0])
    state = AdamState(lr=0.01)
    for g in grads:
        adam_step(state, {"w": w}, {"w": np.array([g])})
    assert abs(w[0] - scalar_adam(grads, w0, lr=0.01)[-1]) < 1e-12
    assert state.step == len(grads)


def test_adam_shape_mismatch():
    with pytest.raises(ContractError):
        adam_step(AdamState(), {"w": np.zeros(3)}, {"w": np.zeros(2)})
    state = AdamState()
    adam_step(state, {"w": np.zeros(3)}, {"w": np.ones(3)})
    with pytest.raises(ContractError):
        adam_step(state, {"w": np.zeros(4)}, {"w": np.ones(4)})


def test_clipping_bounds_update_and_is_counted():
    w = Tensor(np.zeros(2))
    opt = Adam({"w": w}, lr=1e-3, clip_norm=1.0)
    opt.step({"w": np.array([30.0, 40.0])})
    opt.step({"w": np.array([0.3, 0.4])})
    assert opt.clipped_steps == 1


# --- epochs ----------------------------------------------------------------------


def test_one_step_per_epoch_when_batch_covers_data():
    data = small_data()
    model = HDSRNN(small_config(), 0)
    opt = Adam(model.parameters(), lr=1e-3)
    train_epoch(model, opt, data.train, batch_size=10_000, rng=np.random.default_rng(0))
    assert opt.state.step == 1
    train_epoch(model, opt, data.train, batch_size=64, rng=np.random.default_rng(0))
    assert opt.state.step == 1 + math.ceil(len(data.train) / 64)


def test_zero_learning_rate_is_bitwise_noop():
    data = small_data()
    model = HDSRNN(small_config(), 0)
    before = model.get_state()
    opt = Adam(model.parameters(), lr=0.0)
    rng = np.random.default_rng(0)
    losses = [train_epoch(model, opt, data.train, 32, rng) for _ in range(3)]
    for k, v in model.get_state().items():
        assert np.array_equal(v, before[k])
    assert losses[0] == losses[1] == losses[2]


def test_empty_windows_rejected():
    model = HDSRNN(small_config(), 0)
    empty = Windows(np.zeros((0, 2, 5)), np.zeros(0), np.zeros((0, 2)), np.zeros(0, dtype=int))
    with pytest.raises(ConfigurationError):
        train_epoch(model, Adam(model.parameters()), empty, 8, np.random.default_rng(0))


def test_loss_curves_repeat_bitwise():
    data = small_data()
    tc = TrainConfig(max_epochs=3, patience=3, rng_seed=4)
    r1, _ = fit(small_config(), tc, data, deterministic=True)
    r2, _ = fit(small_config(), tc, data, deterministic=True)
    assert r1.train_loss == r2.train_loss and r1.val_loss == r2.val_loss
    assert r1.to_json() == r2.to_json()


# --- fit -------------------------------------------------------------------------


def test_patience_zero_stops_at_first_non_improving_epoch():
    data = small_data()
    r, _ = fit(small_config(), TrainConfig(max_epochs=60, patience=0, learning_rate=0.05), data, deterministic=True)
    vals = r.val_loss
    first_bad = next((i for i in range(1, len(vals)) if vals[i] >= min(vals[:i])), None)
    if first_bad is None:
        assert r.epochs_run == 60 and not r.stopped_early
    else:
        assert r.epochs_run == first_bad + 1 and r.stopped_early


def test_best_state_is_restored(tmp_path):
    data = small_data()
    r, model = fit(small_config(), TrainConfig(max_epochs=15, patience=15, learning_rate=0.05), data,
                   deterministic=True, checkpoint_path=tmp_path / "ck.json")
    assert r.best_val_loss == min(r.val_loss)
    assert r.best_epoch == int(np.argmin(r.val_loss))
    from hdsrnn.training import evaluate_loss

    assert evaluate_loss(model, data.val) == r.best_val_loss
    assert load_checkpoint(tmp_path / "ck.json").get_state().keys() == model.get_state().keys()


def test_report_invariant_within_patience():
    data = small_data()
    r, _ = fit(small_config(), TrainConfig(max_epochs=25, patience=5, learning_rate=0.03), data, deterministic=True)
    b = r.best_epoch
    assert all(r.best_val_loss <= v for v in r.val_loss[b:b + r.train_config["patience"] + 1])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_with_epoch():
    data = small_data()
    data.train.Y[...] = 1e200
    with pytest.raises(TrainingDivergedError) as info:
        fit(small_config(), TrainConfig(max_epochs=3, patience=3), data, deterministic=True)
    assert info.value.epoch == 0


def test_report_json_round_trip(tmp_path):
    data = small_data()
    r, _ = fit(small_config(), TrainConfig(max_epochs=2, patience=2), data)
    assert r.wall_clock is not None and r.wall_clock > 0
    r.save(tmp_path / "r.json")
    assert TrainReport.load(tmp_path / "r.json") == r
    assert r.metric("residual").n_windows == len(data.test)


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(max_epochs=5, patience=6)
    with pytest.raises(ConfigurationError):
        TrainConfig.from_dict({"epochs": 3})


def test_stop_loss_ends_training():
    data = small_data()
    r, _ = fit(small_config(), TrainConfig(max_epochs=50, patience=50, stop_loss=10.0), data, deterministic=True)
    assert r.epochs_run == 1


# --- grid search -----------------------------------------------------------------


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(0, 1) == derive_seed(0, 1)
    assert len({derive_seed(0, i) for i in range(50)}) == 50


def test_expand_grid():
    assert expand_grid({"a": [1, 2], "b": [3]}) == [{"a": 1, "b": 3}, {"a": 2, "b": 3}]


def test_singleton_grid_equals_fit():
    data = small_data()
    tc = TrainConfig(max_epochs=2, patience=2, rng_seed=5)
    [trial] = grid_search(small_config(), tc, data, {"hidden_dim": [4]})
    r, _ = fit(small_config(), dataclasses.replace(tc, rng_seed=derive_seed(5, 0)), data, deterministic=True)
    assert trial.report.to_json() == r.to_json()


def test_zero_lr_trial_ranks_last():
    data = small_data()
    tc = TrainConfig(max_epochs=5, patience=5, learning_rate=0.01)
    ranked = grid_search(small_config(), tc, data, {"learning_rate": [0.0, 0.01]})
    assert ranked[0].overrides == {"learning_rate": 0.01}


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grid_ranking_repeats_and_records_divergence():
    data = small_data()
    tc = TrainConfig(max_epochs=2, patience=2)
    grid = {"hidden_dim": [3, 4], "encoder_length": [5]}
    a = grid_search(small_config(), tc, data, grid)
    b = grid_search(small_config(), tc, data, grid)
    assert [t.index for t in a] == [t.index for t in b]
    assert [t.val_loss for t in a] == [t.val_loss for t in b]

    bad = small_data()
    bad.train.Y[...] = 1e200
    res = grid_search(small_config(), tc, bad, {"hidden_dim": [3, 4]})
    assert [t.status for t in res] == ["diverged", "diverged"]
    assert all(t.error for t in res)


def test_grid_rejects_unknown_key():
    with pytest.raises(ConfigurationError):
        grid_search(small_config(), TrainConfig(max_epochs=1, patience=1), small_data(), {"colour": [1]})


def test_parallel_grid_matches_serial():
    data = small_data()
    tc = TrainConfig(max_epochs=2, patience=2)
    grid = {"hidden_dim": [3, 4]}
    serial = grid_search(small_config(), tc, data, grid)
    parallel = grid_search(small_config(), tc, data, grid, n_jobs=2)
    assert [t.report.to_json() for t in serial] == [t.report.to_json() for t in parallel]
