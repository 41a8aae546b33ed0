"""Reference forecasters: persistence, seasonal naive, linear AR, an MLP and Seq2Seq.

Every baseline consumes the same windows as the main model, so the scores
are directly comparable.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .attention import SpatialVariant
from .errors import ConfigurationError, DimensionError, InsufficientDataError, RankDeficiencyError
from .layers import AffineLayer, affine
from .metrics import MetricSet
from .model import HDSRNN, ModelConfig
from .pipeline import DEFAULT_PERIOD, PreparedData, SeriesPanel, Windows, WindowSplits, prepare
from .training import TrainConfig, TrainReport, fit, predict_windows, score_forecasts, train_model

KINDS = ("persistence", "seasonal_naive", "linear_ar", "mlp", "seq2seq")
_ALIASES = {
    "persistence": "persistence",
    "seasonalnaive": "seasonal_naive",
    "seasonal_naive": "seasonal_naive",
    "snaive": "seasonal_naive",
    "linearar": "linear_ar",
    "linear_ar": "linear_ar",
    "ar": "linear_ar",
    "mlp": "mlp",
    "ann": "mlp",
    "seq2seq": "seq2seq",
}


def parse_kind(kind: str) -> str:
    key = str(kind).strip().lower().replace("-", "_")
    if key not in _ALIASES:
        raise ConfigurationError(f"unknown baseline kind {kind!r}; valid kinds: {', '.join(KINDS)}")
    return _ALIASES[key]


# --- naive forecasters -----------------------------------------------------------


def persistence_forecast(windows: Windows) -> np.ndarray:
    """Repeat the last observed target value for every step."""
    tau = windows.decoder_length
    return np.repeat(np.asarray(windows.y_last, dtype=np.float64)[:, None], tau, axis=1)


def seasonal_naive_forecast(windows: Windows, period: int = DEFAULT_PERIOD, panel: SeriesPanel | None = None) -> np.ndarray:
    """``y[T + k] = y[T + k - period]``, wrapping to the last observed cycle when ``k > period``.

    History comes from ``panel`` when given (any split, since it is all in the
    past), otherwise from the encoder window itself.
    """
    if period < 1:
        raise ConfigurationError("period must be >= 1")
    tau, T = windows.decoder_length, windows.encoder_length
    back = (np.arange(tau) % period) + 1 - period  # offset from the last encoder step, always <= 0
    if panel is not None:
        idx = windows.end[:, None] + back[None, :]
        if idx.size and idx.min() < 0:
            raise InsufficientDataError(f"seasonal naive needs {period} steps of history before the first window")
        return panel.values[windows.target][idx]
    if T < period:
        raise InsufficientDataError(f"encoder window T={T} is shorter than the period {period} and no panel was given")
    return windows.X[:, windows.target, T - 1 + back]


# --- linear autoregression -------------------------------------------------------


@dataclass
class LinearAR:
    coef: np.ndarray  # (p,), coef[0] multiplies the most recent value
    intercept: float = 0.0

    @property
    def order(self) -> int:
        return len(self.coef)


def _lag_design(windows: Windows, order: int) -> np.ndarray:
    T = windows.encoder_length
    if not 1 <= order <= T:
        raise ConfigurationError(f"AR order must lie in [1, T={T}], got {order}")
    hist = windows.X[:, windows.target, :]
    return hist[:, ::-1][:, :order]  # most recent first


def linear_ar_fit(windows: Windows, order: int = 2, intercept: bool = True) -> LinearAR:
    """Least squares one-step fit on the target's own lags.

    A design whose lag columns are all constant carries no information beyond
    the intercept, so it falls back to an intercept-only fit.  Any other
    rank deficiency raises.
    """
    A = _lag_design(windows, order)
    y = windows.Y[:, 0]
    if len(y) <= order:
        raise InsufficientDataError(f"{len(y)} windows are not enough for an order-{order} fit")
    if intercept and np.all(np.ptp(A, axis=0) == 0.0):
        return LinearAR(np.zeros(order), float(np.mean(y)))
    design = np.column_stack([A, np.ones(len(y))]) if intercept else A
    sol, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        raise RankDeficiencyError(f"lag design has rank {rank} < {design.shape[1]} columns")
    if intercept:
        return LinearAR(sol[:-1], float(sol[-1]))
    return LinearAR(sol, 0.0)


def linear_ar_forecast(model: LinearAR, windows: Windows) -> np.ndarray:
    """Recursive multi-step forecast, feeding predictions back as lags."""
    lags = _lag_design(windows, model.order).copy()
    out = np.empty((len(windows), windows.decoder_length))
    for k in range(windows.decoder_length):
        nxt = lags @ model.coef + model.intercept
        out[:, k] = nxt
        lags = np.column_stack([nxt, lags[:, :-1]])
    return out


# --- MLP -------------------------------------------------------------------------


@dataclass
class MlpConfig:
    n_sensors: int
    encoder_length: int
    decoder_length: int
    hidden: tuple = (64, 64)
    target_sensor: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if min((self.n_sensors, self.encoder_length, self.decoder_length) + self.hidden) < 1:
            raise ConfigurationError("MLP sizes must all be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class MLP:
    """Flattened (n * T) window -> tanh hidden layers -> tau outputs."""

    def __init__(self, config: MlpConfig, rng=0):
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.config = config
        sizes = [config.n_sensors * config.encoder_length, *config.hidden, config.decoder_length]
        self.layers = [AffineLayer.init(a, b, rng, name=f"mlp.{i}") for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
        self.trained = False

    def parameters(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.parameters(f"mlp.{i}"))
        return out

    def get_state(self) -> dict:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def set_state(self, state: dict) -> None:
        for k, p in self.parameters().items():
            p.data[...] = state[k]

    def predict(self, X, y_last=None, train: bool = False, rng=None, y_true=None) -> tn.Tensor:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[1:] != (self.config.n_sensors, self.config.encoder_length):
            raise DimensionError(f"MLP expects (B, {self.config.n_sensors}, {self.config.encoder_length}), got {X.shape}")
        h = tn.Tensor(X.reshape(len(X), -1))
        for layer in self.layers[:-1]:
            h = tn.tanh(affine(layer, h))
        return affine(self.layers[-1], h)


# --- dispatch --------------------------------------------------------------------


@dataclass
class BaselineSpec:
    kind: str
    order: int = 2  # linear AR
    hidden: tuple = (64, 64)  # MLP
    period: int = DEFAULT_PERIOD  # seasonal naive
    model_config: ModelConfig | None = None  # Seq2Seq; attention is forced off
    train_config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.kind = parse_kind(self.kind)
        if self.order < 1 or self.period < 1:
            raise ConfigurationError("order and period must be positive")
        if self.kind == "mlp" and (not self.hidden or min(self.hidden) < 1):
            raise ConfigurationError("MLP hidden widths must be positive")

    def seq2seq_config(self, n_sensors: int, T: int, tau: int, target: int) -> ModelConfig:
        base = self.model_config or ModelConfig(n_sensors=n_sensors)
        return dataclasses.replace(base, n_sensors=n_sensors, encoder_length=T, decoder_length=tau,
                                   target_sensor=target, spatial_variant=SpatialVariant.NONE,
                                   temporal_attention=False)


@dataclass
class BaselineResult:
    kind: str
    forecasts: np.ndarray  # (N_test, tau), on the windows' scale
    test_loss: float
    test_metrics: dict  # scale -> MetricSet as dict, as in TrainReport
    report: TrainReport | None = None
    model: object = None

    def metric(self, scale: str = "residual") -> MetricSet:
        return MetricSet.from_dict(self.test_metrics[scale])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "test_loss": self.test_loss,
            "test_metrics": self.test_metrics,
            "report": None if self.report is None else self.report.to_dict(),
        }


def _as_data(data, T: int, tau: int, target, period: int):
    if isinstance(data, SeriesPanel):
        return prepare(data, T, tau, target, period)
    if isinstance(data, (PreparedData, WindowSplits)):
        w = data.train
        if w.encoder_length != T or w.decoder_length != tau:
            raise DimensionError(f"windows have (T, tau) = ({w.encoder_length}, {w.decoder_length}), asked for ({T}, {tau})")
        return data
    raise ConfigurationError(f"cannot run a baseline on {type(data).__name__}")


def run_baseline(spec: BaselineSpec, data, T: int, tau: int, target=0, period: int = DEFAULT_PERIOD,
                 deterministic: bool = False) -> BaselineResult:
    """Fit (when needed) on the training windows and score the test split.

    ``data`` is a raw panel (pretreated like the main model's input) or
    already-windowed data.
    """
    data = _as_data(data, T, tau, target, period)
    test = data.test
    report, model = None, None
    if spec.kind == "persistence":
        pred = persistence_forecast(test)
    elif spec.kind == "seasonal_naive":
        pred = seasonal_naive_forecast(test, spec.period, getattr(data, "panel", None))
    elif spec.kind == "linear_ar":
        model = linear_ar_fit(data.train, spec.order)
        pred = linear_ar_forecast(model, test)
    elif spec.kind == "mlp":
        n = data.train.X.shape[1]
        cfg = MlpConfig(n, T, tau, spec.hidden, data.target)
        model = MLP(cfg, np.random.default_rng(np.random.SeedSequence([spec.train_config.rng_seed, 0])))
        report = train_model(model, spec.train_config, data, deterministic=deterministic)
        pred = predict_windows(model, test)
    else:
        cfg = spec.seq2seq_config(data.train.X.shape[1], T, tau, data.target)
        report, model = fit(cfg, spec.train_config, data, deterministic=deterministic)
        pred = predict_windows(model, test)
    loss, scored = score_forecasts(data, pred)
    return BaselineResult(spec.kind, pred, loss, scored, report, model)


def seq2seq_model(config: ModelConfig, rng=0) -> HDSRNN:
    """The attention-free encoder-decoder, built through the main model class."""
    return HDSRNN(dataclasses.replace(config, spatial_variant=SpatialVariant.NONE, temporal_attention=False), rng)
