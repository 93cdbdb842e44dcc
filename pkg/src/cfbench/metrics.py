"""Deterministic point-forecast error metrics."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateTarget

__all__ = ["PointMetrics", "point_metrics", "METRIC_NAMES", "EPS"]

EPS = 1e-8
METRIC_NAMES = ("mae", "mse", "rmse", "mape", "smape", "rse", "r2")


@dataclass(frozen=True)
class PointMetrics:
    mae: float
    mse: float
    rmse: float
    mape: float
    smape: float
    rse: float
    r2: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def point_metrics(y, y_hat, eps: float = EPS) -> PointMetrics:
    """Score point forecasts ``y_hat`` against ``y``.

    MSE is the mean (not the sum) of squared errors over all scored elements.
    RSE is SSE divided by the total sum of squares of ``y``; R2 = 1 - RSE.
    When ``y`` has zero variance RSE and R2 are NaN and a
    :class:`~cfbench.errors.DegenerateTarget` warning is issued.
    """
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ValueError("need at least one element")
    err = y - y_hat
    abs_err = np.abs(err)
    sse = float(np.sum(err**2))
    mse = sse / y.size
    mape = float(np.mean(abs_err / np.maximum(np.abs(y), eps)))
    smape = float(2.0 * np.mean(abs_err / np.maximum(np.abs(y) + np.abs(y_hat), eps)))
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst > 0:
        rse = sse / sst
    else:
        warnings.warn("target has zero variance; RSE and R2 are undefined",
                      DegenerateTarget, stacklevel=2)
        rse = float("nan")
    return PointMetrics(
        mae=float(abs_err.mean()),
        mse=mse,
        rmse=float(np.sqrt(mse)),
        mape=mape,
        smape=smape,
        rse=rse,
        r2=1.0 - rse,
    )
