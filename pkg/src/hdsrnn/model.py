"""The dual-stage attention encoder-decoder and its ablations.

The encoder runs spatial attention over the n sensors at every step and feeds
the re-weighted snapshot to a (possibly stacked) LSTM; its top-layer hidden
states form ``Z`` of shape (m, T).  The decoder attends over the columns of
``Z`` at every forecast step and emits one target value per step.

Decoder wiring follows the DA-RNN convention:

* the context for step t' is computed from the decoder state left by the
  previous step (zeros for the first step);
* the decoder LSTM input is ``affine([y_prev; context])`` (a scalar), where
  ``y_prev`` is the last observed target for the first step and the model's
  own previous output afterwards (or ground truth under teacher forcing);
* the emitted value is ``affine([h_d; context])``.

With ``spatial_variant="none"`` and ``temporal_attention=False`` the network
is a plain LSTM sequence-to-sequence model whose decoder starts from the final
encoder state.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .attention import (
    SpatialAttentionParams,
    SpatialVariant,
    TemporalAttentionParams,
    apply_spatial,
    encoder_term,
    series_term,
    spatial_scores,
    spatial_weights,
    temporal_context,
    temporal_scores,
)
from .errors import ConfigurationError, DimensionError
from .layers import AffineLayer, DropoutSpec, LstmCell, affine, dropout, lstm_step
from .tensor import Tensor

CHECKPOINT_FORMAT = "hdsrnn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    n_sensors: int
    encoder_length: int = 60
    decoder_length: int = 4
    hidden_dim: int = 64
    layer_count: int = 1
    spatial_variant: SpatialVariant | str = SpatialVariant.HYBRID
    temporal_attention: bool = True
    dropout: float = 0.2
    target_sensor: int = 0
    teacher_forcing: bool = False
    attention_dim: int | None = None

    def __post_init__(self):
        self.spatial_variant = SpatialVariant.parse(self.spatial_variant)
        for name in ("n_sensors", "encoder_length", "decoder_length", "hidden_dim", "layer_count"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 <= self.target_sensor < self.n_sensors:
            raise ConfigurationError(f"target_sensor {self.target_sensor} outside 0..{self.n_sensors - 1}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.attention_dim is not None and self.attention_dim < 1:
            raise ConfigurationError("attention_dim must be >= 1")

    @property
    def spatial_width(self) -> int:
        if self.attention_dim is not None:
            return self.attention_dim
        if self.spatial_variant is SpatialVariant.TEMPORAL_INPUT:
            return self.encoder_length
        return self.hidden_dim

    @property
    def is_seq2seq(self) -> bool:
        return self.spatial_variant is SpatialVariant.NONE and not self.temporal_attention

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["spatial_variant"] = self.spatial_variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Forecast:
    """Model output for one window, or a batch of windows when arrays carry a leading axis.

    ``values`` stays on the tape so a loss can be built from it.  The weight
    traces are plain arrays: spatial ``(T, n)`` and temporal ``(tau, T)``;
    ``None`` when the corresponding attention stage is disabled.
    """

    values: Tensor
    spatial_weight_trace: np.ndarray | None = None
    temporal_weight_trace: np.ndarray | None = None


@dataclass
class EncoderOutput:
    Z: Tensor  # (B, m, T)
    spatial_trace: np.ndarray | None  # (B, T, n)
    final_states: list = field(default_factory=list)  # [(h, s)] per layer


class HDSRNN:
    """Hybrid dual-stage attention RNN with switchable spatial score function."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator | int | None = 0):
        self.config = config
        rng = np.random.default_rng(rng)
        c = config
        n, T, m = c.n_sensors, c.encoder_length, c.hidden_dim

        self.spatial = None
        if c.spatial_variant is not SpatialVariant.NONE:
            self.spatial = SpatialAttentionParams.init(c.spatial_variant, n, T, m, c.spatial_width, rng)
        self.encoder = [
            LstmCell.init(n if k == 0 else m, m, rng, name=f"encoder.lstm{k}") for k in range(c.layer_count)
        ]
        self.temporal = TemporalAttentionParams.init(m, rng) if c.temporal_attention else None
        self.decoder = [
            LstmCell.init(1 if k == 0 else m, m, rng, name=f"decoder.lstm{k}") for k in range(c.layer_count)
        ]
        ctx = m if c.temporal_attention else 0
        self.decoder_input = AffineLayer.init(1 + ctx, 1, rng, name="decoder.input")
        self.output = AffineLayer.init(m + ctx, 1, rng, name="decoder.output")
        self.trained = False

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> dict:
        out = {}
        if self.spatial is not None:
            out.update(self.spatial.parameters("spatial"))
        for k, cell in enumerate(self.encoder):
            out.update(cell.parameters(f"encoder.lstm{k}"))
        if self.temporal is not None:
            out.update(self.temporal.parameters("temporal"))
        for k, cell in enumerate(self.decoder):
            out.update(cell.parameters(f"decoder.lstm{k}"))
        out.update(self.decoder_input.parameters("decoder.input"))
        out.update(self.output.parameters("decoder.output"))
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def get_state(self) -> dict:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def set_state(self, state: dict) -> None:
        params = self.parameters()
        if set(state) != set(params):
            raise ConfigurationError(
                f"parameter names differ: missing {sorted(set(params) - set(state))}, "
                f"unexpected {sorted(set(state) - set(params))}"
            )
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"parameter {name}: expected shape {p.shape}, got {arr.shape}")
            p.data[...] = arr

    # -- forward ------------------------------------------------------------

    def encode(self, X, train: bool = False, rng: np.random.Generator | None = None) -> EncoderOutput:
        c = self.config
        X = tn.as_tensor(X)
        if X.ndim == 2:
            X = tn.reshape(X, (1,) + X.shape)
        if X.ndim != 3 or X.shape[1:] != (c.n_sensors, c.encoder_length):
            raise DimensionError(
                f"encode: expected window (n={c.n_sensors}, T={c.encoder_length}), got shape {X.shape}"
            )
        B, n, T = X.shape
        m = c.hidden_dim
        states = [(Tensor(np.zeros((B, m))), Tensor(np.zeros((B, m)))) for _ in self.encoder]

        cache = None
        if self.spatial is not None and self.spatial.variant.uses_series:
            cache = series_term(self.spatial, X)
        trace = np.empty((B, T, n)) if self.spatial is not None else None
        hidden = []
        for t in range(T):
            x_t = tn.getitem(X, (slice(None), slice(None), t))
            if self.spatial is not None:
                h0, s0 = states[0]
                a = spatial_weights(spatial_scores(self.spatial, X, t, h0, s0, series_cache=cache))
                trace[:, t, :] = a.data
                x_t = apply_spatial(a, x_t)
            inp = x_t
            for k, cell in enumerate(self.encoder):
                h, s = lstm_step(cell, inp, *states[k])
                states[k] = (h, s)
                inp = h
            hidden.append(inp)
        Z = tn.stack(hidden, axis=2)
        return EncoderOutput(Z=Z, spatial_trace=trace, final_states=states)

    def decode(self, enc: EncoderOutput, y_last, train: bool = False, rng: np.random.Generator | None = None,
               y_true=None) -> Forecast:
        c = self.config
        Z = enc.Z
        B, m, T = Z.shape
        y_last = np.asarray(y_last.data if isinstance(y_last, Tensor) else y_last, dtype=np.float64)
        y_last = y_last.reshape(B, 1)
        drop = DropoutSpec(c.dropout, training=train)
        teacher = None
        if train and c.teacher_forcing and y_true is not None:
            teacher = np.asarray(y_true, dtype=np.float64).reshape(B, c.decoder_length)

        if self.temporal is not None:
            Zd = dropout(drop, Z, rng)
            cache = encoder_term(self.temporal, Zd)
            states = [(Tensor(np.zeros((B, m))), Tensor(np.zeros((B, m)))) for _ in self.decoder]
            trace = np.empty((B, c.decoder_length, T))
        else:
            states = list(enc.final_states)
            trace = None

        prev = Tensor(y_last)
        outputs = []
        for step in range(c.decoder_length):
            if self.temporal is not None:
                h_top, s_top = states[-1]
                beta = tn.softmax(temporal_scores(self.temporal, Zd, h_top, s_top, encoder_cache=cache), axis=-1)
                trace[:, step, :] = beta.data
                ctx = temporal_context(beta, Zd)
                inp = affine(self.decoder_input, tn.concat([prev, ctx], axis=-1))
            else:
                inp = affine(self.decoder_input, prev)
            for k, cell in enumerate(self.decoder):
                h, s = lstm_step(cell, inp, *states[k])
                states[k] = (h, s)
                inp = h
            h_out = dropout(drop, inp, rng)
            if self.temporal is not None:
                y_hat = affine(self.output, tn.concat([h_out, ctx], axis=-1))
            else:
                y_hat = affine(self.output, h_out)
            outputs.append(y_hat)
            prev = Tensor(teacher[:, step:step + 1]) if teacher is not None else y_hat
        values = tn.concat(outputs, axis=1)
        return Forecast(values=values, spatial_weight_trace=enc.spatial_trace, temporal_weight_trace=trace)

    def forward(self, X, y_last, train: bool = False, rng: np.random.Generator | None = None,
                y_true=None) -> Forecast:
        """Forecast ``tau`` target values from a window.

        ``X`` is ``(n, T)`` or a batch ``(B, n, T)``; ``y_last`` the last observed
        target value(s).  Single windows come back without the batch axis.
        """
        single = np.ndim(X.data if isinstance(X, Tensor) else X) == 2
        enc = self.encode(X, train=train, rng=rng)
        fc = self.decode(enc, y_last, train=train, rng=rng, y_true=y_true)
        if single:
            fc = Forecast(
                values=tn.reshape(fc.values, (self.config.decoder_length,)),
                spatial_weight_trace=None if fc.spatial_weight_trace is None else fc.spatial_weight_trace[0],
                temporal_weight_trace=None if fc.temporal_weight_trace is None else fc.temporal_weight_trace[0],
            )
        return fc

    __call__ = forward

    def predict(self, X, y_last, train: bool = False, rng=None, y_true=None) -> Tensor:
        """Batched forecast values only; the interface the training loop uses."""
        return self.forward(X, y_last, train=train, rng=rng, y_true=y_true).values

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(self, path)

    @classmethod
    def load(cls, path) -> "HDSRNN":
        return load_checkpoint(path)


def save_checkpoint(model: HDSRNN, path, extra: dict | None = None) -> None:
    """Write config and every named parameter to a versioned JSON container.

    Floats are written with ``repr`` precision, so values round-trip bit for bit.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "trained": model.trained,
        "params": {
            name: {"shape": list(p.shape), "data": p.data.reshape(-1).tolist()}
            for name, p in model.parameters().items()
        },
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> HDSRNN:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path} is not a model checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {doc.get('version')}")
    model = HDSRNN(ModelConfig.from_dict(doc["config"]), rng=0)
    state = {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }
    model.set_state(state)
    model.trained = bool(doc.get("trained", False))
    return model
