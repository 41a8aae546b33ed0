"""Pretreatment: differencing, seasonal profile, z-scoring, windowing, reconstruction.

The raw panel ``x`` (n sensors by L steps) becomes

    d[t] = x[t] - x[t-1]                    first difference, length L-1
    r[t] = d[t] - profile[slot(t)]          additive seasonal residual
    z[t] = (r[t] - mu) / sigma              per-sensor training moments

Every statistic (profile, mu, sigma) comes from the training split only and is
then applied unchanged to validation and test.  Forecasts on the ``z`` scale
are mapped back to raw values by :func:`reconstruct`.

Index convention: entry ``j`` of a differenced panel belongs to raw step
``j + 1`` and carries that step's timestamp.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import AlignmentError, DegenerateSensorError, DimensionError, InsufficientDataError

CADENCE = np.timedelta64(30, "m")
DEFAULT_PERIOD = 48
SPLITS = ("train", "val", "test")


def split_bounds(length: int, ratios=(4, 1, 1)) -> tuple[int, int]:
    """End indices (exclusive) of the train and validation splits."""
    total = float(sum(ratios))
    train_end = int(round(length * ratios[0] / total))
    val_end = int(round(length * (ratios[0] + ratios[1]) / total))
    return train_end, val_end


@dataclass
class SeriesPanel:
    """Aligned sensor readings, ``values[k, t]`` for sensor k at ``timestamps[t]``.

    ``train_end`` and ``val_end`` are exclusive split ends on the time axis.
    """

    sensor_ids: list
    timestamps: np.ndarray
    values: np.ndarray
    train_end: int
    val_end: int
    kinds: list = field(default=None)
    cadence: np.timedelta64 = CADENCE

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[m]")
        self.cadence = np.timedelta64(self.cadence, "m")
        n, L = self.values.shape
        if len(self.sensor_ids) != n:
            raise DimensionError(f"{len(self.sensor_ids)} sensor ids for {n} value rows")
        if self.timestamps.shape != (L,):
            raise DimensionError(f"{self.timestamps.shape[0]} timestamps for {L} columns")
        if self.kinds is None:
            self.kinds = [_kind_from_id(s) for s in self.sensor_ids]
        if not 0 < self.train_end <= self.val_end <= L:
            raise InsufficientDataError(f"split bounds ({self.train_end}, {self.val_end}) invalid for L={L}")
        if L > 1:
            steps = np.diff(self.timestamps)
            if not np.all(steps == self.cadence):
                raise AlignmentError(f"timestamps must advance by exactly {self.cadence}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("panel contains missing or non-finite values; impute before loading")

    @property
    def n_sensors(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def split_range(self, split: str) -> tuple[int, int]:
        return {"train": (0, self.train_end), "val": (self.train_end, self.val_end),
                "test": (self.val_end, self.length)}[split]

    def split_values(self, split: str) -> np.ndarray:
        lo, hi = self.split_range(split)
        return self.values[:, lo:hi]

    def index_of(self, sensor) -> int:
        if isinstance(sensor, (int, np.integer)):
            return int(sensor)
        return self.sensor_ids.index(sensor)

    def with_values(self, values, timestamps=None, train_end=None, val_end=None) -> "SeriesPanel":
        return replace(
            self,
            values=values,
            timestamps=self.timestamps if timestamps is None else timestamps,
            train_end=self.train_end if train_end is None else train_end,
            val_end=self.val_end if val_end is None else val_end,
        )


def _kind_from_id(sensor_id) -> str:
    s = str(sensor_id).upper()
    return {"F": "flow", "P": "pressure"}.get(s[:1], "unknown")


def make_panel(values, sensor_ids=None, start="2020-01-01T00:00", ratios=(4, 1, 1), kinds=None,
               cadence=CADENCE) -> SeriesPanel:
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    n, L = values.shape
    if sensor_ids is None:
        sensor_ids = [f"S{k + 1}" for k in range(n)]
    cadence = np.timedelta64(cadence, "m")
    timestamps = np.datetime64(start, "m") + cadence * np.arange(L)
    train_end, val_end = split_bounds(L, ratios)
    return SeriesPanel(list(sensor_ids), timestamps, values, train_end, val_end, kinds=kinds, cadence=cadence)


def read_panel_csv(path, ratios=(4, 1, 1)) -> SeriesPanel:
    """Load ``timestamp,<sensor>,...`` CSV with ISO-8601 times at 30-minute cadence."""
    df = pd.read_csv(path, float_precision="round_trip")
    if df.columns[0] != "timestamp":
        raise ValueError(f"{path}: first column must be 'timestamp', got {df.columns[0]!r}")
    if df.isna().any().any():
        raise ValueError(f"{path}: missing values are not accepted")
    ts = pd.to_datetime(df["timestamp"]).to_numpy().astype("datetime64[m]")
    values = df.drop(columns="timestamp").to_numpy(dtype=np.float64).T
    train_end, val_end = split_bounds(len(ts), ratios)
    return SeriesPanel(list(df.columns[1:]), ts, values, train_end, val_end)


def write_panel_csv(panel: SeriesPanel, path) -> None:
    df = pd.DataFrame(panel.values.T, columns=panel.sensor_ids)
    df.insert(0, "timestamp", np.datetime_as_string(panel.timestamps, unit="m"))
    df.to_csv(path, index=False, float_format="%.17g")


# --- differencing ------------------------------------------------------------


def difference(panel: SeriesPanel) -> SeriesPanel:
    """First difference along time; split bounds shift with the dropped first column."""
    if panel.length < 2:
        raise InsufficientDataError("differencing needs at least 2 time steps")
    d = np.diff(panel.values, axis=1)
    return panel.with_values(d, timestamps=panel.timestamps[1:],
                             train_end=max(panel.train_end - 1, 1), val_end=max(panel.val_end - 1, 1))


def integrate(diffs: np.ndarray, anchor) -> np.ndarray:
    """Inverse of :func:`difference`: ``anchor + cumsum(diffs)`` along the last axis."""
    anchor = np.asarray(anchor, dtype=np.float64)
    return anchor[..., None] + np.cumsum(diffs, axis=-1)


# --- seasonal decomposition ----------------------------------------------------


def slot_index(timestamps, cadence=CADENCE, period: int = DEFAULT_PERIOD) -> np.ndarray:
    """Seasonal slot of each timestamp: steps since the epoch modulo ``period``.

    With a 30-minute cadence and period 48 this is the half-hour of the day.
    """
    ts = np.atleast_1d(np.asarray(timestamps, dtype="datetime64[m]"))
    minutes = ts.astype(np.int64)
    step = int(np.timedelta64(cadence, "m").astype(np.int64))
    if np.any(minutes % step):
        raise AlignmentError(f"timestamps are not on the {step}-minute grid")
    return (minutes // step) % period


@dataclass
class DecompositionModel:
    """Fitted seasonal profile and residual moments (training split only)."""

    period: int
    sensor_ids: list
    profile: np.ndarray  # (n, period), mean differenced value per slot
    mean: np.ndarray  # (n,), residual mean
    std: np.ndarray  # (n,), residual std (ddof=0)
    cadence_minutes: int = 30

    @property
    def cadence(self) -> np.timedelta64:
        return np.timedelta64(self.cadence_minutes, "m")

    def slots(self, timestamps) -> np.ndarray:
        return slot_index(timestamps, self.cadence, self.period)

    def seasonal(self, timestamps) -> np.ndarray:
        """Profile values for every sensor at ``timestamps``, shape (n, len)."""
        return self.profile[:, self.slots(timestamps)]

    def to_json(self) -> str:
        return json.dumps({
            "period": self.period,
            "sensor_ids": list(self.sensor_ids),
            "cadence_minutes": self.cadence_minutes,
            "profile": self.profile.tolist(),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "DecompositionModel":
        d = json.loads(text)
        return cls(
            period=int(d["period"]),
            sensor_ids=list(d["sensor_ids"]),
            profile=np.array(d["profile"], dtype=np.float64),
            mean=np.array(d["mean"], dtype=np.float64),
            std=np.array(d["std"], dtype=np.float64),
            cadence_minutes=int(d["cadence_minutes"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "DecompositionModel":
        return cls.from_json(Path(path).read_text())


def fit_seasonal(diff_panel: SeriesPanel, period: int = DEFAULT_PERIOD) -> DecompositionModel:
    """Per-slot means of the training part of a differenced panel, plus residual moments."""
    lo, hi = diff_panel.split_range("train")
    if hi - lo < 2 * period:
        raise InsufficientDataError(f"training split has {hi - lo} steps; need at least {2 * period}")
    train = diff_panel.values[:, lo:hi]
    cadence = diff_panel.cadence
    slots = slot_index(diff_panel.timestamps[lo:hi], cadence, period)
    n = diff_panel.n_sensors
    profile = np.empty((n, period))
    for s in range(period):
        profile[:, s] = train[:, slots == s].mean(axis=1)
    resid = train - profile[:, slots]
    return DecompositionModel(
        period=period,
        sensor_ids=list(diff_panel.sensor_ids),
        profile=profile,
        mean=resid.mean(axis=1),
        std=resid.std(axis=1),
        cadence_minutes=int(cadence.astype(np.int64)),
    )


def deseasonalize(diff_panel: SeriesPanel, model: DecompositionModel) -> SeriesPanel:
    return diff_panel.with_values(diff_panel.values - model.seasonal(diff_panel.timestamps))


def normalize(residual_panel: SeriesPanel, model: DecompositionModel) -> SeriesPanel:
    """Z-score every sensor with the training moments stored in ``model``."""
    for k, sd in enumerate(model.std):
        if not sd > 0:
            raise DegenerateSensorError(model.sensor_ids[k])
    z = (residual_panel.values - model.mean[:, None]) / model.std[:, None]
    return residual_panel.with_values(z)


def denormalize(z, model: DecompositionModel, sensor=None) -> np.ndarray:
    """Map z-scored values back to residuals; ``sensor`` selects one row's moments."""
    z = np.asarray(z, dtype=np.float64)
    if sensor is None:
        return z * model.std[:, None] + model.mean[:, None]
    return z * model.std[sensor] + model.mean[sensor]


def transform(panel: SeriesPanel, model: DecompositionModel) -> SeriesPanel:
    """Raw panel to z-scored residuals with an already fitted model."""
    return normalize(deseasonalize(difference(panel), model), model)


def inverse_transform(z_panel: SeriesPanel, model: DecompositionModel, first_values) -> np.ndarray:
    """Rebuild raw values (n, L) from a z-scored residual panel and the raw first column."""
    d = denormalize(z_panel.values, model) + model.seasonal(z_panel.timestamps)
    first = np.asarray(first_values, dtype=np.float64)
    return np.concatenate([first[:, None], integrate(d, first)], axis=1)


def reconstruct(z_forecast, model: DecompositionModel, anchor_time, anchor_value, sensor: int = 0) -> np.ndarray:
    """Original-scale forecast from a z-scored residual forecast.

    ``anchor_time``/``anchor_value`` are the timestamp and raw value of the last
    observed target step; the forecast covers the following ``tau`` steps.
    Accepts a single forecast ``(tau,)`` or a batch ``(B, tau)`` with matching
    arrays of anchors.
    """
    zf = np.asarray(z_forecast, dtype=np.float64)
    single = zf.ndim == 1
    zf = np.atleast_2d(zf)
    B, tau = zf.shape
    anchor_time = np.atleast_1d(np.asarray(anchor_time, dtype="datetime64[m]"))
    anchor_value = np.atleast_1d(np.asarray(anchor_value, dtype=np.float64))
    if anchor_time.shape != (B,) or anchor_value.shape != (B,):
        raise DimensionError(f"need one anchor per forecast: {B} forecasts, {anchor_time.shape[0]} anchors")
    times = anchor_time[:, None] + model.cadence * np.arange(1, tau + 1)
    slots = model.slots(times.reshape(-1)).reshape(B, tau)
    d = denormalize(zf, model, sensor) + model.profile[sensor][slots]
    out = integrate(d, anchor_value)
    return out[0] if single else out


# --- windowing ---------------------------------------------------------------


@dataclass
class Windows:
    """Stacked sliding windows.

    ``X`` (N, n, T) inputs, ``y_last`` (N,) last observed target, ``Y`` (N, tau)
    targets, ``end`` (N,) panel index of each window's last encoder step.
    """

    X: np.ndarray
    y_last: np.ndarray
    Y: np.ndarray
    end: np.ndarray
    target: int = 0

    def __len__(self):
        return len(self.y_last)

    def __getitem__(self, idx) -> "Windows":
        return Windows(self.X[idx], self.y_last[idx], self.Y[idx], self.end[idx], self.target)

    @property
    def encoder_length(self) -> int:
        return self.X.shape[2]

    @property
    def decoder_length(self) -> int:
        return self.Y.shape[1]


def windowize(panel: SeriesPanel, T: int, tau: int, target: int, split: str = "train") -> Windows:
    """Stride-1 windows that lie entirely inside ``split``."""
    lo, hi = panel.split_range(split)
    count = hi - lo - T - tau + 1
    if count < 1:
        raise InsufficientDataError(f"{split} split has {hi - lo} steps; need at least T + tau = {T + tau}")
    vals = panel.values
    view = np.lib.stride_tricks.sliding_window_view(vals[:, lo:hi], T + tau, axis=1)  # (n, count, T+tau)
    X = np.ascontiguousarray(view[:, :, :T].transpose(1, 0, 2))
    Y = np.ascontiguousarray(view[target, :, T:])
    ends = lo + np.arange(count) + T - 1
    return Windows(X=X, y_last=vals[target, ends].copy(), Y=Y, end=ends, target=target)


@dataclass
class PreparedData:
    """Everything a model needs from one raw panel."""

    raw: SeriesPanel
    decomposition: DecompositionModel
    panel: SeriesPanel  # z-scored residuals
    train: Windows
    val: Windows
    test: Windows

    @property
    def target(self) -> int:
        return self.train.target

    def windows(self, split: str) -> Windows:
        return getattr(self, split)

    def raw_anchor(self, w: Windows):
        """Timestamp and raw value of each window's last encoder step."""
        raw_idx = w.end + 1
        return self.raw.timestamps[raw_idx], self.raw.values[w.target, raw_idx]

    def raw_truth(self, w: Windows) -> np.ndarray:
        tau = w.decoder_length
        idx = (w.end + 2)[:, None] + np.arange(tau)
        return self.raw.values[w.target][idx]

    def reconstruct(self, w: Windows, z_forecast) -> np.ndarray:
        times, values = self.raw_anchor(w)
        return reconstruct(z_forecast, self.decomposition, times, values, sensor=w.target)


def prepare(panel: SeriesPanel, T: int, tau: int, target=0, period: int = DEFAULT_PERIOD) -> PreparedData:
    """Fit the pretreatment on the training split and cut windows for every split."""
    target = panel.index_of(target)
    diff = difference(panel)
    model = fit_seasonal(diff, period)
    z = normalize(deseasonalize(diff, model), model)
    return PreparedData(
        raw=panel,
        decomposition=model,
        panel=z,
        train=windowize(z, T, tau, target, "train"),
        val=windowize(z, T, tau, target, "val"),
        test=windowize(z, T, tau, target, "test"),
    )


@dataclass
class WindowSplits:
    """Train/val/test windows without a pretreatment (e.g. hand-made data)."""

    train: Windows
    val: Windows
    test: Windows
    panel: SeriesPanel | None = None  # source of lookback beyond the window

    @property
    def target(self) -> int:
        return self.train.target

    def windows(self, split: str) -> Windows:
        return getattr(self, split)


def split_windows(panel: SeriesPanel, T: int, tau: int, target=0) -> WindowSplits:
    """Window a panel as-is, with no differencing or scaling."""
    target = panel.index_of(target)
    return WindowSplits(*(windowize(panel, T, tau, target, s) for s in SPLITS), panel=panel)
