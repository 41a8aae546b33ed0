import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdsrnn import tensor as tn
from hdsrnn.attention import (apply_spatial, spatial_scores, spatial_weights, temporal_context,
                              temporal_scores)
from hdsrnn.errors import ConfigurationError, DimensionError
from hdsrnn.layers import affine, lstm_step
from hdsrnn.model import HDSRNN, ModelConfig, load_checkpoint, save_checkpoint
from hdsrnn.tensor import Tensor, grad_check

VARIANTS = ["temporal_input", "spatial_input", "hybrid"]


def cfg(**kw):
    base = dict(n_sensors=3, encoder_length=5, decoder_length=2, hidden_dim=4, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def randomize_biases(model, rng):
    for name, p in model.parameters().items():
        if name.endswith(".b") or name.endswith(".bias"):
            p.data[...] = rng.uniform(-0.3, 0.3, p.shape)


def scripted_forward(model, X, y_last):
    """Single-window forward written as a straight line of module-level operations."""
    c = model.config
    n, T = X.shape
    m = c.hidden_dim
    Xt = Tensor(X)
    h = s = Tensor(np.zeros(m))
    cols = []
    for t in range(T):
        x_t = Tensor(X[:, t])
        if model.spatial is not None:
            a = spatial_weights(spatial_scores(model.spatial, Xt, t, h, s))
            x_t = apply_spatial(a, x_t)
        h, s = lstm_step(model.encoder[0], x_t, h, s)
        cols.append(h.data)
    Z = np.stack(cols, axis=1)
    out = []
    prev = np.array([y_last])
    if model.temporal is not None:
        hd = sd = Tensor(np.zeros(m))
    else:
        hd, sd = h, s
    for _ in range(c.decoder_length):
        if model.temporal is not None:
            beta = tn.softmax(temporal_scores(model.temporal, Tensor(Z), hd, sd))
            ctx = temporal_context(beta, Tensor(Z)).data
            inp = affine(model.decoder_input, Tensor(np.concatenate([prev, ctx])))
        else:
            inp = affine(model.decoder_input, Tensor(prev))
        hd, sd = lstm_step(model.decoder[0], inp, hd, sd)
        feat = np.concatenate([hd.data, ctx]) if model.temporal is not None else hd.data
        y = affine(model.output, Tensor(feat)).data
        out.append(y[0])
        prev = y
    return Z, np.array(out)


@pytest.mark.parametrize("variant", VARIANTS + ["none"])
def test_forward_matches_scripted_composition(variant, rng):
    model = HDSRNN(cfg(spatial_variant=variant, temporal_attention=variant != "none", encoder_length=4,
                       hidden_dim=3), rng)
    randomize_biases(model, rng)
    X, y_last = rng.standard_normal((3, 4)), float(rng.standard_normal())
    Z_ref, y_ref = scripted_forward(model, X, y_last)
    enc = model.encode(X)
    assert np.max(np.abs(enc.Z.data[0] - Z_ref)) < 1e-12
    assert np.max(np.abs(model.forward(X, y_last).values.data - y_ref)) < 1e-12


def test_encode_five_step_composition(rng):
    model = HDSRNN(cfg(), rng)
    randomize_biases(model, rng)
    X = rng.standard_normal((3, 5))
    Z_ref, _ = scripted_forward(model, X, 0.0)
    assert np.max(np.abs(model.encode(X).Z.data[0] - Z_ref)) < 1e-12


def test_single_sensor_encode_is_plain_lstm(rng):
    model = HDSRNN(cfg(n_sensors=1), rng)
    X = rng.standard_normal((1, 5))
    h = s = Tensor(np.zeros(4))
    for t in range(5):
        h, s = lstm_step(model.encoder[0], Tensor(X[:, t]), h, s)
    enc = model.encode(X)
    np.testing.assert_array_equal(enc.spatial_trace, 1.0)
    np.testing.assert_allclose(enc.Z.data[0][:, -1], h.data, atol=1e-15)


def test_zero_parameters_give_zero_outputs(rng):
    model = HDSRNN(cfg(), rng)
    model.set_state({k: np.zeros(v.shape) for k, v in model.get_state().items()})
    X = rng.standard_normal((3, 5))
    np.testing.assert_array_equal(model.encode(X).Z.data, 0.0)
    np.testing.assert_array_equal(model.forward(X, 1.7).values.data, 0.0)


def test_one_hot_temporal_weights_pick_last_column(rng, monkeypatch):
    import hdsrnn.model as model_mod

    model = HDSRNN(cfg(decoder_length=1), rng)
    randomize_biases(model, rng)
    X, y_last = rng.standard_normal((3, 5)), 0.4

    def last_only(params, Z, h, s, encoder_cache=None):
        f = np.full(Z.shape[:1] + Z.shape[2:], -1e4)
        f[..., -1] = 0.0
        return Tensor(f)

    monkeypatch.setattr(model_mod, "temporal_scores", last_only)
    fc = model.forward(X, y_last)
    np.testing.assert_array_equal(fc.temporal_weight_trace, np.eye(5)[[-1]])
    Z = model.encode(X).Z.data[0]
    ctx = Z[:, -1]
    inp = affine(model.decoder_input, Tensor(np.concatenate([[y_last], ctx])))
    hd, _ = lstm_step(model.decoder[0], inp, Tensor(np.zeros(4)), Tensor(np.zeros(4)))
    expect = affine(model.output, Tensor(np.concatenate([hd.data, ctx]))).data
    np.testing.assert_array_equal(fc.values.data, expect)


@given(n=st.integers(1, 4), T=st.integers(1, 6), tau=st.integers(1, 4), m=st.integers(1, 5),
       variant=st.sampled_from(VARIANTS + ["none"]), temporal=st.booleans(), layers=st.integers(1, 2))
def test_forecast_shapes_and_convex_traces(n, T, tau, m, variant, temporal, layers):
    g = np.random.default_rng(n * 1000 + T * 100 + tau * 10 + m)
    model = HDSRNN(ModelConfig(n, T, tau, m, layers, variant, temporal, 0.0), g)
    fc = model.forward(g.standard_normal((n, T)), 0.3)
    assert fc.values.shape == (tau,)
    if variant == "none":
        assert fc.spatial_weight_trace is None
    else:
        assert fc.spatial_weight_trace.shape == (T, n)
        assert np.all(fc.spatial_weight_trace >= 0)
        np.testing.assert_allclose(fc.spatial_weight_trace.sum(axis=1), 1.0, atol=1e-12)
    if temporal:
        assert fc.temporal_weight_trace.shape == (tau, T)
        np.testing.assert_allclose(fc.temporal_weight_trace.sum(axis=1), 1.0, atol=1e-12)
    else:
        assert fc.temporal_weight_trace is None


def test_inference_is_deterministic(rng):
    model = HDSRNN(cfg(dropout=0.3), rng)
    X = rng.standard_normal((3, 5))
    np.testing.assert_array_equal(model.forward(X, 0.1).values.data, model.forward(X, 0.1).values.data)


def test_training_mode_dropout_uses_rng(rng):
    model = HDSRNN(cfg(dropout=0.5), rng)
    X = rng.standard_normal((2, 3, 5))
    a = model.predict(X, [0.1, 0.2], train=True, rng=np.random.default_rng(1)).data
    b = model.predict(X, [0.1, 0.2], train=True, rng=np.random.default_rng(1)).data
    c = model.predict(X, [0.1, 0.2]).data
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("variant", VARIANTS)
def test_full_model_gradient(variant, rng):
    model = HDSRNN(cfg(spatial_variant=variant), rng)
    randomize_biases(model, rng)
    X, y_last, Y = rng.uniform(-1, 1, (3, 5)), 0.2, rng.uniform(-1, 1, 2)
    report = grad_check(lambda: tn.mse_loss(model.forward(X, y_last).values, Y), model.parameters(), tol=1e-4)
    assert report.passed, str(report)


def test_batched_forward_matches_single(rng):
    model = HDSRNN(cfg(), rng)
    X, y = rng.standard_normal((4, 3, 5)), rng.standard_normal(4)
    batch = model.predict(X, y).data
    for r in range(4):
        np.testing.assert_allclose(batch[r], model.forward(X[r], y[r]).values.data, atol=1e-14)


def test_hybrid_without_snapshot_matches_temporal_input(rng):
    hyb = HDSRNN(cfg(spatial_variant="hybrid", attention_dim=5), rng)
    ti = HDSRNN(cfg(spatial_variant="temporal_input", attention_dim=5), rng)
    state = hyb.get_state()
    state["spatial.u_prime"][...] = 0.0
    hyb.set_state(state)
    ti.set_state({k: v for k, v in state.items() if k != "spatial.u_prime"})
    X = rng.standard_normal((3, 5))
    np.testing.assert_array_equal(hyb.forward(X, 0.5).values.data, ti.forward(X, 0.5).values.data)


def test_seq2seq_parameter_accounting_and_forward(rng):
    n, T, m = 3, 5, 4
    model = HDSRNN(cfg(spatial_variant="none", temporal_attention=False), rng)
    assert model.config.is_seq2seq
    expected = (4 * m * (n + m) + 4 * m) + (4 * m * (1 + m) + 4 * m) + (1 + 1) + (m + 1)
    assert model.parameter_count() == expected
    assert set(model.parameters()) == {"encoder.lstm0.weight", "encoder.lstm0.bias", "decoder.lstm0.weight",
                                       "decoder.lstm0.bias", "decoder.input.weight", "decoder.input.bias",
                                       "decoder.output.weight", "decoder.output.bias"}
    X = rng.standard_normal((n, T))
    _, y_ref = scripted_forward(model, X, 0.7)
    np.testing.assert_allclose(model.forward(X, 0.7).values.data, y_ref, atol=1e-14)


def test_sensor_permutation_invariance(rng):
    model = HDSRNN(cfg(n_sensors=4, spatial_variant="hybrid", target_sensor=0), rng)
    randomize_biases(model, rng)
    X = rng.standard_normal((4, 5))
    perm = np.array([0, 3, 1, 2])  # target stays first
    permuted = HDSRNN(model.config, 0)
    state = model.get_state()
    state["spatial.u_prime"] = state["spatial.u_prime"][:, perm]
    w = state["encoder.lstm0.weight"]
    state["encoder.lstm0.weight"] = np.concatenate([w[:, :4][:, perm], w[:, 4:]], axis=1)
    permuted.set_state(state)
    a = model.forward(X, 0.3).values.data
    b = permuted.forward(X[perm], 0.3).values.data
    assert np.max(np.abs(a - b)) < 1e-12


def test_teacher_forcing_only_in_training(rng):
    model = HDSRNN(cfg(teacher_forcing=True, decoder_length=3), rng)
    X, Y = rng.standard_normal((2, 3, 5)), rng.standard_normal((2, 3))
    free = model.predict(X, [0.0, 0.0]).data
    forced = model.predict(X, [0.0, 0.0], train=True, rng=np.random.default_rng(0), y_true=Y).data
    np.testing.assert_array_equal(free[:, 0], forced[:, 0])
    assert not np.allclose(free[:, 1:], forced[:, 1:])
    np.testing.assert_array_equal(model.predict(X, [0.0, 0.0], y_true=Y).data, free)


def test_encoder_shape_errors(rng):
    model = HDSRNN(cfg(), rng)
    with pytest.raises(DimensionError):
        model.forward(np.zeros((4, 5)), 0.0)
    with pytest.raises(DimensionError):
        model.forward(np.zeros((3, 6)), 0.0)


@pytest.mark.parametrize("kw", [dict(encoder_length=0), dict(decoder_length=0), dict(hidden_dim=0),
                                dict(target_sensor=3), dict(dropout=1.0), dict(spatial_variant="bogus")])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        cfg(**kw)


def test_config_round_trip_rejects_unknown():
    c = cfg(spatial_variant="spatial_input", layer_count=2)
    assert ModelConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ConfigurationError):
        ModelConfig.from_dict(dict(c.to_dict(), colour="red"))


def test_default_widths():
    assert cfg(spatial_variant="temporal_input").spatial_width == 5
    assert cfg(spatial_variant="hybrid").spatial_width == 4
    assert cfg(spatial_variant="spatial_input", attention_dim=7).spatial_width == 7


@pytest.mark.parametrize("variant", VARIANTS + ["none"])
def test_checkpoint_round_trip_is_bitwise(variant, tmp_path, rng):
    model = HDSRNN(cfg(spatial_variant=variant, layer_count=2), rng)
    model.trained = True
    path = tmp_path / "ck.json"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert back.config == model.config and back.trained
    for k, v in model.get_state().items():
        assert np.array_equal(back.get_state()[k], v)
    X = rng.standard_normal((3, 5))
    np.testing.assert_array_equal(back.forward(X, 0.1).values.data, model.forward(X, 0.1).values.data)


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(ConfigurationError):
        load_checkpoint(p)


def test_set_state_checks_names_and_shapes(rng):
    model = HDSRNN(cfg(), rng)
    state = model.get_state()
    with pytest.raises(ConfigurationError):
        model.set_state({k: v for k, v in state.items() if k != "spatial.v"})
    state["spatial.v"] = np.zeros(99)
    with pytest.raises(DimensionError):
        model.set_state(state)
