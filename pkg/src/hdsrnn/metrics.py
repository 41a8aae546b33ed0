"""Forecast error metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionError


@dataclass
class MetricSet:
    mse: float
    rmse: float
    mae: float
    scale: str = "residual"
    n_windows: int = 0
    mean_error: float = 0.0  # signed mean of (pred - truth)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricSet":
        return cls(**d)


def metrics(pred, truth, scale: str = "residual") -> MetricSet:
    """MSE, RMSE and MAE over every window and forecast step.

    MAE takes the absolute value of each error.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"predictions {pred.shape} and truth {truth.shape} are not aligned")
    if pred.size == 0:
        raise DimensionError("no predictions to score")
    err = pred - truth
    mse = float(np.mean(err * err))
    return MetricSet(
        mse=mse,
        rmse=float(np.sqrt(mse)),
        mae=float(np.mean(np.abs(err))),
        scale=scale,
        n_windows=int(pred.shape[0]) if pred.ndim else 1,
        mean_error=float(np.mean(err)),
    )


def per_step_metrics(pred, truth, scale: str = "residual") -> list:
    """One :class:`MetricSet` per forecast step (column)."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    if pred.shape != truth.shape:
        raise DimensionError(f"predictions {pred.shape} and truth {truth.shape} are not aligned")
    return [metrics(pred[:, k], truth[:, k], scale) for k in range(pred.shape[1])]
