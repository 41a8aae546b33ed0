"""Encoder/decoder length sweeps, spatial-attention summaries and CSV export."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractError, TrainingDivergedError
from .metrics import MetricSet, metrics, per_step_metrics
from .model import ModelConfig
from .pipeline import DEFAULT_PERIOD, PreparedData, SeriesPanel, prepare, split_windows
from .training import TrainConfig, TrainReport, fit, predict_windows, score_test_split

__all__ = [
    "MetricSet", "metrics", "per_step_metrics", "SweepPoint", "SweepResult", "sweep_encoder_length",
    "sweep_decoder_length", "AttentionSummary", "spatial_weight_summary", "export_spatial_weights",
    "evaluate_model", "residual_forecasts",
]

ENCODER_CSV = "fig3_encoder_sweep.csv"
DECODER_CSV = "fig5_decoder_sweep.csv"
ATTENTION_CSV = "fig4_attention_weights.csv"


def residual_forecasts(model, data, split: str = "test") -> tuple[np.ndarray, np.ndarray]:
    """Forecasts and truth for ``split`` on the residual scale (de-normalized when possible)."""
    w = data.windows(split)
    pred = predict_windows(model, w)
    truth = w.Y
    if isinstance(data, PreparedData):
        dec = data.decomposition
        k = w.target
        pred = pred * dec.std[k] + dec.mean[k]
        truth = truth * dec.std[k] + dec.mean[k]
    return pred, truth


def evaluate_model(model, data) -> dict:
    """Test metrics on every available scale, keyed by scale tag."""
    _, scored = score_test_split(model, data)
    return {k: MetricSet.from_dict(v) for k, v in scored.items()}


# --- sweeps ----------------------------------------------------------------------


@dataclass
class SweepPoint:
    value: int
    seed: int
    converged: bool
    metric: MetricSet | None = None
    step_metrics: list = field(default_factory=list)
    report: TrainReport | None = None
    error: str | None = None


@dataclass
class SweepResult:
    """All runs of one sweep.  Diverged runs stay in ``points`` with ``converged=False``."""

    param: str
    values: list
    seeds: list
    points: list

    def runs(self, value) -> list:
        return [p for p in self.points if p.value == value]

    def converged(self, value) -> bool:
        return all(p.converged for p in self.runs(value))

    def median_mse(self, value) -> float:
        vals = [p.metric.mse for p in self.runs(value) if p.converged]
        return float(np.median(vals)) if vals else math.nan

    def median_mae(self, value) -> float:
        vals = [p.metric.mae for p in self.runs(value) if p.converged]
        return float(np.median(vals)) if vals else math.nan

    def median_step_mse(self, value) -> list:
        runs = [p for p in self.runs(value) if p.converged]
        if not runs:
            return [math.nan] * int(value)
        return [float(np.median([p.step_metrics[k].mse for p in runs])) for k in range(len(runs[0].step_metrics))]

    def median_step_mae(self, value) -> list:
        runs = [p for p in self.runs(value) if p.converged]
        if not runs:
            return [math.nan] * int(value)
        return [float(np.median([p.step_metrics[k].mae for p in runs])) for k in range(len(runs[0].step_metrics))]

    def rows(self) -> list:
        if self.param == "encoder_length":
            return [{"T": v, "mse": self.median_mse(v), "mae": self.median_mae(v), "converged": self.converged(v)}
                    for v in self.values]
        out = []
        for v in self.values:
            for k, (mse, mae) in enumerate(zip(self.median_step_mse(v), self.median_step_mae(v)), start=1):
                out.append({"tau": v, "step": k, "mse": mse, "mae": mae})
        return out

    def to_csv(self, path) -> Path:
        path = Path(path)
        rows = self.rows()
        cols = ["T", "mse", "mae", "converged"] if self.param == "encoder_length" else ["tau", "step", "mse", "mae"]
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            writer.writeheader()
            for r in rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return path

    def to_dict(self) -> dict:
        return {
            "param": self.param,
            "values": list(self.values),
            "seeds": list(self.seeds),
            "points": [
                {
                    "value": p.value,
                    "seed": p.seed,
                    "converged": p.converged,
                    "metric": None if p.metric is None else p.metric.to_dict(),
                    "step_metrics": [m.to_dict() for m in p.step_metrics],
                    "error": p.error,
                }
                for p in self.points
            ],
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))


def _sweep_job(args) -> SweepPoint:
    param, value, seed, base, train_config, panel, period, deterministic, pretreat = args
    mc = dataclasses.replace(base, **{param: value})
    tc = dataclasses.replace(train_config, rng_seed=seed, grid={})
    try:
        if pretreat:
            data = prepare(panel, mc.encoder_length, mc.decoder_length, mc.target_sensor, period)
        else:
            data = split_windows(panel, mc.encoder_length, mc.decoder_length, mc.target_sensor)
        report, model = fit(mc, tc, data, deterministic=deterministic)
    except TrainingDivergedError as exc:
        return SweepPoint(value, seed, False, error=str(exc))
    pred, truth = residual_forecasts(model, data)
    if not np.all(np.isfinite(pred)):
        return SweepPoint(value, seed, False, report=report, error="non-finite forecasts")
    return SweepPoint(value, seed, True, metrics(pred, truth), per_step_metrics(pred, truth), report)


def _sweep(param: str, base: ModelConfig, train_config: TrainConfig, panel: SeriesPanel, values, seeds,
           period: int, n_jobs: int, deterministic: bool, pretreat: bool) -> SweepResult:
    values = [int(v) for v in values]
    if not values:
        raise ConfigurationError(f"empty {param} list")
    seeds = [int(s) for s in (seeds if seeds is not None else [train_config.rng_seed])]
    jobs = [(param, v, s, base, train_config, panel, period, deterministic, pretreat) for v in values for s in seeds]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            points = list(pool.map(_sweep_job, jobs))
    else:
        points = [_sweep_job(j) for j in jobs]
    return SweepResult(param, values, seeds, points)


def sweep_encoder_length(base: ModelConfig, train_config: TrainConfig, panel: SeriesPanel, T_list, seeds=None,
                         period: int = DEFAULT_PERIOD, n_jobs: int = 1, deterministic: bool = True,
                         out_dir=None, pretreat: bool = True) -> SweepResult:
    """Train and score one fresh model per (T, seed) on the residual scale.

    Every T reuses the same seeds, so a singleton list reproduces a plain
    ``fit`` with that seed.
    """
    res = _sweep("encoder_length", base, train_config, panel, T_list, seeds, period, n_jobs, deterministic, pretreat)
    if out_dir is not None:
        res.to_csv(Path(out_dir) / ENCODER_CSV)
    return res


def sweep_decoder_length(base: ModelConfig, train_config: TrainConfig, panel: SeriesPanel, tau_list, seeds=None,
                         period: int = DEFAULT_PERIOD, n_jobs: int = 1, deterministic: bool = True,
                         out_dir=None, pretreat: bool = True) -> SweepResult:
    """Like :func:`sweep_encoder_length` over tau, keeping the error of every forecast step."""
    res = _sweep("decoder_length", base, train_config, panel, tau_list, seeds, period, n_jobs, deterministic, pretreat)
    if out_dir is not None:
        res.to_csv(Path(out_dir) / DECODER_CSV)
    return res


# --- spatial attention -----------------------------------------------------------


@dataclass
class AttentionSummary:
    sensor_ids: list
    mean_weights: np.ndarray  # (n,), sums to 1
    distances: np.ndarray | None = None  # to the target, when a NetworkSpec is known
    target: int = 0

    def weight(self, sensor_id) -> float:
        return float(self.mean_weights[self.sensor_ids.index(sensor_id)])

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["sensor", "mean_weight", "distance"])
            for k, sid in enumerate(self.sensor_ids):
                d = "" if self.distances is None else repr(float(self.distances[k]))
                writer.writerow([sid, repr(float(self.mean_weights[k])), d])
        return path


def spatial_weight_summary(model, X) -> np.ndarray:
    """Mean spatial weight per sensor over windows and encoder steps."""
    if model.config.spatial_variant.value == "none":
        raise ConfigurationError("model has no spatial attention")
    means = []
    for lo in range(0, len(X), 1024):
        enc = model.encode(X[lo:lo + 1024])
        trace = enc.spatial_trace  # (B, T, n)
        means.append(trace.sum(axis=(0, 1)))
    total = np.sum(means, axis=0)
    return total / total.sum()


def export_spatial_weights(model, data, spec=None, split: str = "test", path=None) -> AttentionSummary:
    """Average spatial weights over ``split`` and join them with distances to the target."""
    if not getattr(model, "trained", False):
        raise ContractError("spatial weights are only meaningful for a trained model")
    w = data.windows(split)
    weights = spatial_weight_summary(model, w.X)
    panel = data.raw if isinstance(data, PreparedData) else getattr(data, "panel", None)
    ids = list(panel.sensor_ids) if panel is not None else [f"x{k}" for k in range(len(weights))]
    dist = None
    if spec is not None:
        if panel is not None and set(ids) <= set(spec.ids):
            full = spec.distances()
            row = spec.index(ids[w.target])
            dist = np.array([full[row, spec.index(s)] for s in ids])
        else:
            dist = spec.distances()[w.target].copy()
    summary = AttentionSummary(ids, weights, dist, w.target)
    if path is not None:
        summary.to_csv(path)
    return summary
