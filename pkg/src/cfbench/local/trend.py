"""Piecewise-linear trend model (a Prophet-style trend without seasonality or holidays).

The series is standardized per instance, time is rescaled to [0, 1] over the
training span and the fit is::

    y(t) = k + m t + sum_j delta_j (t - s_j)_+

with changepoints ``s_j`` on an even grid over the first 80% of the span and a
ridge penalty on the slope changes ``delta_j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SeriesTooShort
from .base import LocalForecast, LocalModel, as_series

__all__ = ["TrendParams", "fit_trend", "TrendModel", "CHANGEPOINT_RANGE"]

CHANGEPOINT_RANGE = 0.8


@dataclass(frozen=True)
class TrendParams:
    """Fitted trend; ``k``, ``m`` and ``delta`` are in standardized units.

    ``loc`` and ``scale`` map standardized values back to the series units.
    """

    k: float
    m: float
    changepoints: np.ndarray
    delta: np.ndarray
    sigma: float
    loc: float
    scale: float
    n: int

    @property
    def intercept(self) -> float:
        return self.loc + self.scale * self.k

    @property
    def slope(self) -> float:
        """Initial slope per observation step in series units."""
        return self.scale * self.m / max(self.n - 1, 1)


def _design(t: np.ndarray, cps: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones_like(t), t, np.maximum(t[:, None] - cps[None, :], 0.0)])


def fit_trend(x, n_changepoints: int = 10, reg: float = 0.5) -> TrendParams:
    x = as_series(x)
    if x.size < n_changepoints + 2:
        raise SeriesTooShort(f"need at least {n_changepoints + 2} observations, got {x.size}")
    n = x.size
    loc = float(x.mean())
    scale = float(x.std())
    if not scale > 1e-12 * max(1.0, abs(loc)):
        scale = 1.0
    y = (x - loc) / scale
    t = np.arange(n) / (n - 1)
    cps = CHANGEPOINT_RANGE * np.arange(1, n_changepoints + 1) / n_changepoints
    X = _design(t, cps)
    pen = np.zeros(X.shape[1])
    pen[2:] = reg
    beta = np.linalg.solve(X.T @ X + np.diag(pen), X.T @ y)
    resid = y - X @ beta
    return TrendParams(float(beta[0]), float(beta[1]), cps, beta[2:].copy(),
                       float(np.sqrt(np.mean(resid**2))), loc, scale, n)


def trend_at(pr: TrendParams, t: np.ndarray) -> np.ndarray:
    return _design(np.asarray(t, dtype=float), pr.changepoints) @ np.r_[pr.k, pr.m, pr.delta]


class TrendModel(LocalModel):
    name = "trend"
    probabilistic = True

    def __init__(self, n_changepoints: int = 10, reg: float = 0.5):
        self.n_changepoints = int(n_changepoints)
        self.reg = float(reg)

    def config(self):
        return {"n_changepoints": self.n_changepoints, "reg": self.reg}

    def fit(self, x):
        self.params_ = fit_trend(x, self.n_changepoints, self.reg)
        return self

    def _future_t(self, h):
        n = self.params_.n
        return (n - 1 + np.arange(1, h + 1)) / (n - 1)

    def forecast(self, h):
        pr = self.params_
        mean = pr.loc + pr.scale * trend_at(pr, self._future_t(h))
        return LocalForecast(mean)

    def sample(self, h, n, rng):
        """Paths with random future slope changes plus observation noise.

        Future changepoints arrive at the historical rate (``n_changepoints``
        per unit of rescaled time) with Laplace magnitudes whose scale is the
        mean absolute fitted slope change.
        """
        pr = self.params_
        tf = self._future_t(h)
        base = trend_at(pr, tf)
        dt = 1.0 / (pr.n - 1)
        rate = len(pr.changepoints) * dt
        lap_scale = float(np.mean(np.abs(pr.delta))) if pr.delta.size else 0.0
        out = np.empty((n, h))
        for i in range(n):
            path = base.copy()
            if lap_scale > 0:
                hits = rng.random(h) < rate
                for j in np.flatnonzero(hits):
                    # a changepoint inside step j bends the trend from tf[j-1] onwards
                    start = tf[j] - dt
                    path += rng.laplace(0.0, lap_scale) * np.maximum(tf - start, 0.0)
            out[i] = path + rng.normal(0.0, pr.sigma, size=h)
        return pr.loc + pr.scale * out

    def params(self):
        pr = self.params_
        return {"k": pr.k, "m": pr.m, "delta": pr.delta.tolist(), "sigma": pr.sigma,
                "loc": pr.loc, "scale": pr.scale}
