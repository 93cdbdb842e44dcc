from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptySeries, SeriesTooShort


@dataclass(frozen=True)
class LocalForecast:
    """Point forecasts for steps 1..H and, for Gaussian models, their variances."""

    mean: np.ndarray
    var: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return len(self.mean)


def as_series(x, min_len: int = 1) -> np.ndarray:
    """Validate a 1-D series without missing values; raise on empty/short input."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D series, got shape {x.shape}")
    if np.isnan(x).any():
        raise ValueError("series contains missing values; local models refuse gaps")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    if x.size == 0:
        raise EmptySeries("series has no observations")
    if x.size < min_len:
        raise SeriesTooShort(f"need at least {min_len} observations, got {x.size}")
    return x


class LocalModel:
    """Univariate forecaster fitted on one series at a time."""

    name = "local"
    probabilistic = False

    def fit(self, x) -> "LocalModel":
        raise NotImplementedError

    def forecast(self, h: int) -> LocalForecast:
        raise NotImplementedError

    def sample(self, h: int, n: int, rng: np.random.Generator) -> np.ndarray:
        """``(n, h)`` sample paths; deterministic models repeat their point forecast."""
        return np.tile(self.forecast(h).mean, (n, 1))

    def params(self) -> dict:
        return {}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.config().items())
        return f"{type(self).__name__}({args})"

    def config(self) -> dict:
        return {}
