"""Forecast distributions, sampling, and CRPS scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import EmptyReport

__all__ = [
    "QUANTILE_LEVELS",
    "BAND_LEVELS",
    "ForecastDistribution",
    "sample",
    "crps",
    "crps_fast",
    "crps_gaussian",
    "ncrps_report",
]

QUANTILE_LEVELS = np.array([0.01, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5,
                            0.6, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 0.99])
QUANTILE_LEVELS.setflags(write=False)
# Closest symmetric pair on the grid to a 68% band.
BAND_LEVELS = (0.15, 0.85)

KINDS = ("point", "quantiles", "samples")


@dataclass(frozen=True, eq=False)
class ForecastDistribution:
    """Forecast for a block of (target, horizon step) cells.

    ``values`` has shape ``(n_targets, H)`` for point forecasts and
    ``(n_targets, H, K)`` otherwise, where ``K`` indexes quantile levels or
    samples.
    """

    kind: str
    values: np.ndarray
    levels: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        v = np.array(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("forecast values must be finite")
        if self.kind == "point":
            if v.ndim != 2:
                raise ValueError("point forecasts need shape (targets, H)")
        else:
            if v.ndim != 3 or v.shape[-1] < 1:
                raise ValueError(f"{self.kind} need shape (targets, H, K>=1)")
        if self.kind == "quantiles":
            lv = np.array(QUANTILE_LEVELS if self.levels is None else self.levels, dtype=float)
            if lv.shape != (v.shape[-1],) or np.any(np.diff(lv) <= 0):
                raise ValueError("levels must be strictly increasing and match the last axis")
            if np.any(np.diff(v, axis=-1) < 0):
                raise ValueError("quantile values must be nondecreasing in level")
            lv.setflags(write=False)
            object.__setattr__(self, "levels", lv)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_raw_quantiles(cls, raw, levels=QUANTILE_LEVELS) -> "ForecastDistribution":
        """Build from possibly crossing quantile outputs by sorting (rearrangement)."""
        return cls("quantiles", np.sort(np.asarray(raw, dtype=float), axis=-1), levels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    def point(self) -> np.ndarray:
        """Central point forecast: the value, the median level, or the sample mean."""
        if self.kind == "point":
            return self.values
        if self.kind == "quantiles":
            half = np.full(self.shape + (1,), 0.5)
            return _inverse_cdf(self.levels, self.values, half)[..., 0]
        return self.values.mean(axis=-1)


def _inverse_cdf(levels: np.ndarray, knots: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise ``np.interp(u, levels, knots)`` for knots of shape ``(..., Q)``."""
    uc = np.clip(u, levels[0], levels[-1])
    k = np.clip(np.searchsorted(levels, uc, side="right") - 1, 0, len(levels) - 2)
    lo = np.take_along_axis(knots, k, axis=-1)
    hi = np.take_along_axis(knots, k + 1, axis=-1)
    frac = (uc - levels[k]) / (levels[k + 1] - levels[k])
    return lo + frac * (hi - lo)


def sample(fd: ForecastDistribution, n: int = 100, seed=0) -> np.ndarray:
    """Draw ``n`` samples per cell; returns shape ``(n_targets, H, n)``.

    Quantile forecasts are sampled through the piecewise-linear inverse CDF
    through the (level, value) knots, flat below the lowest and above the
    highest level.
    """
    rng = np.random.default_rng(seed)
    if fd.kind == "point":
        return np.repeat(fd.values[..., None], n, axis=-1)
    if fd.kind == "quantiles":
        u = rng.random(fd.shape + (n,))
        return _inverse_cdf(fd.levels, fd.values, u)
    pick = rng.integers(0, fd.values.shape[-1], size=fd.shape + (n,))
    return np.take_along_axis(fd.values, pick, axis=-1)


def crps(samples, y) -> float:
    """Energy-form CRPS of an empirical ensemble by the full O(m^2) double sum.

    ``mean|s_i - y| - 1/(2 m^2) * sum_ij |s_i - s_j|`` with self-pairs included.
    """
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("need at least one sample")
    m = s.size
    spread = np.abs(s[:, None] - s[None, :]).sum()
    return float(np.abs(s - y).mean() - spread / (2.0 * m * m))


def crps_fast(samples, y, presorted: bool = False):
    """Same value as :func:`crps` in O(m log m); vectorized over leading axes.

    ``samples`` has shape ``(..., m)`` and ``y`` broadcasts against ``(...)``.
    """
    s = np.asarray(samples, dtype=float)
    if s.shape[-1] == 0:
        raise ValueError("need at least one sample")
    if not presorted:
        s = np.sort(s, axis=-1)
    m = s.shape[-1]
    y = np.asarray(y, dtype=float)
    # sum_ij |s_i - s_j| = 2 sum_k gap_k * k * (m - k) over sorted gaps
    k = np.arange(1, m)
    spread = 2.0 * (np.diff(s, axis=-1) * (k * (m - k))).sum(axis=-1)
    out = np.abs(s - y[..., None]).mean(axis=-1) - spread / (2.0 * m * m)
    # a degenerate ensemble scores exactly its absolute error
    out = np.where(s[..., 0] == s[..., -1], np.abs(s[..., 0] - y), out)
    return float(out) if out.ndim == 0 else out


def crps_gaussian(mu, sigma, y):
    """Closed-form CRPS of N(mu, sigma^2) at ``y``."""
    z = (np.asarray(y, dtype=float) - mu) / sigma
    return sigma * (z * (2 * norm.cdf(z) - 1) + 2 * norm.pdf(z) - 1 / np.sqrt(np.pi))


def ncrps_report(values) -> float:
    """Average CRPS over all (feature, horizon, fold) cells; lower is better."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise EmptyReport("no CRPS cells to aggregate")
    return float(v.mean())
