"""Theta method in its exponential-smoothing-with-drift form.

The classic Theta forecast combines the theta=0 line (the OLS trend) with
simple exponential smoothing of the theta-scaled series. It is equivalent to
SES with a drift equal to ``(1 - 1/theta)`` times the OLS slope; for the
classic ``theta = 2`` that is half the slope. ``theta = inf`` carries the
full slope, ``theta = 1`` is plain SES.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .base import LocalForecast, LocalModel, as_series

__all__ = ["ThetaParams", "fit_theta", "ses_drift_errors", "ThetaModel", "AutoThetaModel",
           "ALPHA_GRID", "THETA_GRID"]

MIN_LEN = 4
ALPHA_GRID = np.round(np.arange(0.05, 0.951, 0.05), 2)
THETA_GRID = (1.0, 1.5, 2.0, 2.5, 3.0)


@dataclass(frozen=True)
class ThetaParams:
    alpha: float
    drift: float
    level: float
    theta: float
    sigma2: float


def ols_slope(x: np.ndarray) -> float:
    t = np.arange(x.size, dtype=float)
    tc = t - t.mean()
    return float(tc @ (x - x.mean()) / (tc @ tc))


def drift_for(slope: float, theta: float) -> float:
    return slope if np.isinf(theta) else (1.0 - 1.0 / theta) * slope


def ses_drift_errors(x, alpha: float, drift: float) -> tuple[np.ndarray, float]:
    """One-step errors for t = 1..n-1 and the final level (level_0 = x_0)."""
    x = np.asarray(x, dtype=float)
    level = x[0]
    err = np.empty(x.size - 1)
    for t in range(1, x.size):
        pred = level + drift
        err[t - 1] = x[t] - pred
        level = pred + alpha * err[t - 1]
    return err, float(level)


def fit_theta(x, theta: float = 2.0, alpha: float | None = None) -> ThetaParams:
    """Fit SES-with-drift; ``alpha`` is estimated on (0, 1] when not given."""
    x = as_series(x, min_len=MIN_LEN)
    drift = drift_for(ols_slope(x), theta)
    if alpha is None:
        res = minimize_scalar(lambda a: float(np.sum(ses_drift_errors(x, a, drift)[0] ** 2)),
                              bounds=(1e-3, 1.0), method="bounded",
                              options={"xatol": 1e-6})
        alpha = float(res.x)
    err, level = ses_drift_errors(x, alpha, drift)
    return ThetaParams(float(alpha), drift, level, float(theta), float(np.mean(err**2)))


def _forecast(pr: ThetaParams, h: int) -> LocalForecast:
    steps = np.arange(1, h + 1)
    mean = pr.level + pr.drift * steps
    var = pr.sigma2 * (1.0 + (steps - 1) * pr.alpha**2)
    return LocalForecast(mean, var)


def _sample(pr: ThetaParams, h: int, n: int, rng) -> np.ndarray:
    # simulate the state-space form so each path is internally consistent
    eps = rng.normal(0.0, np.sqrt(pr.sigma2), size=(n, h))
    out = np.empty((n, h))
    level = np.full(n, pr.level)
    for k in range(h):
        out[:, k] = level + pr.drift + eps[:, k]
        level = level + pr.drift + pr.alpha * eps[:, k]
    return out


class ThetaModel(LocalModel):
    name = "theta"
    probabilistic = True

    def __init__(self, theta: float = 2.0):
        self.theta = float(theta)

    def config(self):
        return {"theta": self.theta}

    def fit(self, x):
        self.params_ = fit_theta(x, self.theta)
        return self

    def forecast(self, h):
        return _forecast(self.params_, h)

    def sample(self, h, n, rng):
        return _sample(self.params_, h, n, rng)

    def params(self):
        return vars(self.params_).copy()


class AutoThetaModel(ThetaModel):
    """Grid search over (alpha, theta) minimizing in-sample one-step SSE."""

    name = "autotheta"

    def __init__(self, alphas=ALPHA_GRID, thetas=THETA_GRID):
        self.alphas = tuple(float(a) for a in alphas)
        self.thetas = tuple(float(t) for t in thetas)

    def config(self):
        return {}

    def fit(self, x):
        x = as_series(x, min_len=MIN_LEN)
        slope = ols_slope(x)
        best = None
        for theta, alpha in itertools.product(self.thetas, self.alphas):
            sse = float(np.sum(ses_drift_errors(x, alpha, drift_for(slope, theta))[0] ** 2))
            if best is None or sse < best[0] - 1e-12:
                best = (sse, theta, alpha)
        self.params_ = fit_theta(x, best[1], alpha=best[2])
        return self
