"""Adam, the mini-batch loop, early stopping and grid search."""

from __future__ import annotations

import dataclasses
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .errors import ConfigurationError, ContractError, DimensionError, TrainingDivergedError
from .metrics import MetricSet, metrics
from .model import HDSRNN, ModelConfig, save_checkpoint
from .pipeline import DEFAULT_PERIOD, PreparedData, SeriesPanel, Windows, prepare

log = logging.getLogger(__name__)


# --- Adam ----------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update, applied in place to ``params[name].data``.

    ``params`` maps names to tensors (or arrays), ``grads`` names to arrays.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        data = p.data if isinstance(p, tn.Tensor) else p
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(data)
        if g.shape != data.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, parameter has {data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(data)
            state.v[name] = np.zeros_like(data)
        elif m.shape != data.shape:
            raise ContractError(f"Adam moments for {name} have shape {m.shape}, parameter has {data.shape}")
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


class Adam:
    """Adam bound to a parameter dict, with optional global-norm clipping."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, clip_norm: float | None = None):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        self.clip_norm = clip_norm
        self.clipped_steps = 0

    def step(self, grads: dict) -> None:
        if self.clip_norm is not None:
            total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / total
                grads = {k: g * scale for k, g in grads.items()}
                self.clipped_steps += 1
        adam_step(self.state, self.params, grads)


# --- training loop -------------------------------------------------------------


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 20
    learning_rate: float = 1e-3
    rng_seed: int = 0
    clip_norm: float | None = 5.0
    stop_loss: float | None = None  # end training once the epoch loss drops below this
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigurationError("max_epochs must be >= 1")
        if not 0 <= self.patience <= self.max_epochs:
            raise ConfigurationError(f"patience {self.patience} must lie in [0, max_epochs={self.max_epochs}]")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def named_grads(params: dict, grads: dict) -> dict:
    return {name: grads.get(p, np.zeros_like(p.data)) for name, p in params.items()}


def train_epoch(model, optimizer: Adam, windows: Windows, batch_size: int, rng: np.random.Generator) -> float:
    """Shuffle, then one Adam step per mini-batch.  Returns the mean per-window loss.

    Per-window losses are averaged in window order, so the returned value does
    not depend on the shuffle.
    """
    N = len(windows)
    if N == 0:
        raise ConfigurationError("no training windows")
    params = model.parameters()
    order = rng.permutation(N)
    per_window = np.empty(N)
    for lo in range(0, N, batch_size):
        idx = order[lo:lo + batch_size]
        with tn.Tape():
            pred = model.predict(windows.X[idx], windows.y_last[idx], train=True, rng=rng, y_true=windows.Y[idx])
            loss = tn.mse_loss(pred, windows.Y[idx])
            grads = tn.backward(loss)
        optimizer.step(named_grads(params, grads))
        per_window[idx] = np.mean((pred.data - windows.Y[idx]) ** 2, axis=1)
    return float(np.mean(per_window))


def predict_windows(model, windows: Windows, batch_size: int = 1024) -> np.ndarray:
    """Inference-mode forecasts for every window, shape (N, tau)."""
    out = []
    for lo in range(0, len(windows), batch_size):
        sl = slice(lo, lo + batch_size)
        out.append(model.predict(windows.X[sl], windows.y_last[sl]).data)
    return np.concatenate(out, axis=0)


def evaluate_loss(model, windows: Windows) -> float:
    err = predict_windows(model, windows) - windows.Y
    return float(np.mean(err * err))


@dataclass
class TrainReport:
    train_loss: list
    val_loss: list
    best_epoch: int
    best_val_loss: float
    test_loss: float
    test_metrics: dict  # scale -> MetricSet as dict
    epochs_run: int
    stopped_early: bool
    clipped_steps: int
    seed: int
    model_config: dict
    train_config: dict
    wall_clock: float | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, d: dict) -> "TrainReport":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def metric(self, scale: str = "residual") -> MetricSet:
        return MetricSet.from_dict(self.test_metrics[scale])


def score_forecasts(data, pred, split: str = "test") -> tuple[float, dict]:
    """Loss on the windows' own scale plus metrics on every scale the data supports.

    ``pred`` holds one forecast row per window of ``split``.
    """
    w = data.windows(split)
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != w.Y.shape:
        raise DimensionError(f"forecasts {pred.shape} do not match {split} windows {w.Y.shape}")
    loss = float(np.mean((pred - w.Y) ** 2))
    out = {}
    if isinstance(data, PreparedData):
        dec = data.decomposition
        k = w.target
        res_pred = pred * dec.std[k] + dec.mean[k]
        res_true = w.Y * dec.std[k] + dec.mean[k]
        out["residual"] = metrics(res_pred, res_true, "residual").to_dict()
        out["reconstructed"] = metrics(data.reconstruct(w, pred), data.raw_truth(w), "reconstructed").to_dict()
    else:
        out["residual"] = metrics(pred, w.Y, "residual").to_dict()
    return loss, out


def score_test_split(model, data) -> tuple[float, dict]:
    return score_forecasts(data, predict_windows(model, data.test))


def _check_windows(model_config: ModelConfig, data) -> None:
    w = data.train
    if w.X.shape[1:] != (model_config.n_sensors, model_config.encoder_length):
        raise DimensionError(
            f"windows have shape (n, T) = {w.X.shape[1:]}, config expects "
            f"({model_config.n_sensors}, {model_config.encoder_length})"
        )
    if w.decoder_length != model_config.decoder_length:
        raise DimensionError(f"windows have tau={w.decoder_length}, config expects {model_config.decoder_length}")


def resolve_data(model_config: ModelConfig, data, period: int = DEFAULT_PERIOD):
    if isinstance(data, SeriesPanel):
        data = prepare(data, model_config.encoder_length, model_config.decoder_length,
                       model_config.target_sensor, period)
    _check_windows(model_config, data)
    return data


def train_model(model, train_config: TrainConfig, data, init_seed: int | None = None,
                deterministic: bool = False) -> TrainReport:
    """Train ``model`` in place with early stopping on validation MSE and best-state restore."""
    tc = train_config
    started = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence([tc.rng_seed, 1]))
    params = model.parameters()
    opt = Adam(params, lr=tc.learning_rate, clip_norm=tc.clip_norm)

    best_val, best_epoch, best_state = math.inf, -1, model.get_state()
    train_curve, val_curve = [], []
    wait, stopped_early = 0, False
    for epoch in range(tc.max_epochs):
        loss = train_epoch(model, opt, data.train, tc.batch_size, rng)
        if not math.isfinite(loss):
            raise TrainingDivergedError(epoch)
        val = evaluate_loss(model, data.val)
        if not math.isfinite(val):
            raise TrainingDivergedError(epoch, f"validation loss became non-finite at epoch {epoch}")
        train_curve.append(loss)
        val_curve.append(val)
        log.debug("epoch %d train %.6g val %.6g", epoch, loss, val)
        if val < best_val:
            best_val, best_epoch, best_state = val, epoch, model.get_state()
            wait = 0
        else:
            wait += 1
            if wait > tc.patience:
                stopped_early = True
                break
        if tc.stop_loss is not None and loss < tc.stop_loss:
            break

    model.set_state(best_state)
    model.trained = True
    test_loss, test_m = score_test_split(model, data)
    cfg = model.config.to_dict() if hasattr(model.config, "to_dict") else dict(model.config)
    return TrainReport(
        train_loss=train_curve,
        val_loss=val_curve,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        test_loss=test_loss,
        test_metrics=test_m,
        epochs_run=len(train_curve),
        stopped_early=stopped_early,
        clipped_steps=opt.clipped_steps,
        seed=tc.rng_seed if init_seed is None else init_seed,
        model_config=cfg,
        train_config=tc.to_dict(),
        wall_clock=None if deterministic else time.perf_counter() - started,
    )


def fit(model_config: ModelConfig, train_config: TrainConfig, data, period: int = DEFAULT_PERIOD,
        deterministic: bool = False, checkpoint_path=None):
    """Build, train and evaluate an :class:`HDSRNN`.

    ``data`` is a raw :class:`SeriesPanel` (pretreated here with ``period``)
    or anything with ``train``/``val``/``test`` windows.  Returns
    ``(report, model)``; with ``deterministic`` the wall-clock field is left
    empty so repeated runs serialize identically.
    """
    data = resolve_data(model_config, data, period)
    init_rng = np.random.default_rng(np.random.SeedSequence([train_config.rng_seed, 0]))
    model = HDSRNN(model_config, rng=init_rng)
    report = train_model(model, train_config, data, deterministic=deterministic)
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    return report, model


# --- grid search ---------------------------------------------------------------------


def derive_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


@dataclass
class TrialResult:
    index: int
    overrides: dict
    seed: int
    status: str  # "ok" or "diverged"
    val_loss: float
    report: TrainReport | None = None
    error: str | None = None


def expand_grid(grid: dict) -> list:
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _split_overrides(overrides: dict):
    mkeys = {f.name for f in dataclasses.fields(ModelConfig)}
    tkeys = {f.name for f in dataclasses.fields(TrainConfig)}
    m, t = {}, {}
    for k, v in overrides.items():
        if k in mkeys:
            m[k] = v
        elif k in tkeys:
            t[k] = v
        else:
            raise ConfigurationError(f"grid key {k!r} is neither a model nor a training setting")
    return m, t


def _run_trial(args) -> TrialResult:
    index, overrides, template, train_config, data, period, deterministic = args
    m_over, t_over = _split_overrides(overrides)
    seed = derive_seed(train_config.rng_seed, index)
    mc = dataclasses.replace(template, **m_over)
    tc = dataclasses.replace(train_config, rng_seed=seed, grid={}, **t_over)
    try:
        report, _ = fit(mc, tc, data, period=period, deterministic=deterministic)
    except TrainingDivergedError as exc:
        return TrialResult(index, overrides, seed, "diverged", math.inf, error=str(exc))
    return TrialResult(index, overrides, seed, "ok", report.best_val_loss, report=report)


def grid_search(template: ModelConfig, train_config: TrainConfig, data, grid: dict | None = None,
                period: int = DEFAULT_PERIOD, n_jobs: int = 1, deterministic: bool = True) -> list:
    """Train every grid combination and rank by best validation MSE.

    Trial ``i`` uses seed ``derive_seed(train_config.rng_seed, i)``, so results
    do not depend on ``n_jobs``.  Diverged trials are kept and ranked last.
    """
    grid = grid if grid is not None else train_config.grid
    combos = expand_grid(grid) if grid else [{}]
    if not combos:
        raise ConfigurationError("empty grid")
    jobs = [(i, c, template, train_config, data, period, deterministic) for i, c in enumerate(combos)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_trial, jobs))
    else:
        results = [_run_trial(j) for j in jobs]
    return sorted(results, key=lambda r: (r.status != "ok", r.val_loss, r.index))
