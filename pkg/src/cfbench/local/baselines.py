"""Mean and autoregressive-mean baselines."""

from __future__ import annotations

import numpy as np

from .base import LocalForecast, LocalModel, as_series


def fit_mean(x) -> "MeanModel":
    return MeanModel().fit(x)


def fit_armean(x, p: int) -> "ARMeanModel":
    return ARMeanModel(p).fit(x)


class MeanModel(LocalModel):
    """Predicts the training mean at every horizon step."""

    name = "mean"

    def fit(self, x):
        x = as_series(x)
        self.mean_ = float(x.mean())
        return self

    def forecast(self, h):
        return LocalForecast(np.full(h, self.mean_))

    def params(self):
        return {"mean": self.mean_}


class ARMeanModel(LocalModel):
    """Mean of the last ``p`` values, rolled forward on its own predictions."""

    name = "armean"

    def __init__(self, p: int = 1):
        if p < 1:
            raise ValueError("p must be >= 1")
        self.p = int(p)

    def config(self):
        return {"p": self.p}

    def fit(self, x):
        x = as_series(x, min_len=self.p)
        self.tail_ = x[-self.p:].copy()
        return self

    def forecast(self, h):
        buf = list(self.tail_)
        out = np.empty(h)
        for i in range(h):
            out[i] = sum(buf[-self.p:]) / self.p
            buf.append(out[i])
        return LocalForecast(out)

    def params(self):
        return {"tail": self.tail_.tolist()}
