"""Cross-company forecasters with a common fit/predict interface for the harness.

``fit`` sees the normalized ``N x T x D`` tensor and may only use quarters at
or before calendar index ``end``; ``predict`` maps lookback windows
``(n, B, D)`` to ``(n, n_targets, H)`` point forecasts or
``(n, n_targets, H, K)`` quantiles.
"""

from __future__ import annotations

import copy

import numpy as np

from ..errors import NoValidWindows
from ..prob import QUANTILE_LEVELS
from .lag import LagMatrix, lag_design, lag_rows, window_origins
from .linear_nets import LinearNet, revin_denormalize, revin_normalize
from .linreg import fit_linreg, fit_quantile_linreg
from .train import TrainConfig, company_split, train

__all__ = ["GlobalModel", "LinearRegressionModel", "DLinearModel", "NLinearModel",
           "RevinForecaster", "revin_wrap", "GLOBAL_MODELS"]


class GlobalModel:
    name = "global"

    def __init__(self, targets, B: int = 12, H: int = 4, quantiles: bool = True,
                 statics: bool = False, cfg: TrainConfig | None = None):
        self.targets = list(targets)
        self.B, self.H = int(B), int(H)
        self.quantiles = bool(quantiles)
        self.statics = bool(statics)
        self.cfg = cfg or TrainConfig()

    @property
    def probabilistic(self) -> bool:
        return self.quantiles

    @property
    def levels(self):
        return QUANTILE_LEVELS if self.quantiles else None

    def config(self) -> dict:
        return {"B": self.B, "H": self.H, "quantiles": self.quantiles, "statics": self.statics}

    def fit(self, tensor, sectors, company_ids, end: int, seed: int = 0):
        raise NotImplementedError

    def predict(self, windows, sectors) -> np.ndarray:
        raise NotImplementedError

    def weights(self) -> dict:
        raise NotImplementedError


class LinearRegressionModel(GlobalModel):
    """One linear head per (target, horizon step) on flattened lags of all features."""

    name = "linreg"

    def fit(self, tensor, sectors, company_ids, end, seed=0):
        company_ids = np.asarray(company_ids)
        sectors = np.asarray(sectors)
        self.heads_ = {}
        for j in self.targets:
            for h in range(1, self.H + 1):
                comp, origin, win, y = lag_rows(tensor, self.B, h, j, end)
                if comp.size == 0:
                    raise NoValidWindows(f"no windows for target {j}, h={h} up to {end}")
                X = lag_design(win, sectors[comp] if self.statics else None)
                lm = LagMatrix(X, y, company_ids[comp], origin, self.B, h, str(j))
                self.heads_[(j, h)] = (fit_quantile_linreg(lm, cfg=self.cfg, seed=seed)
                                       if self.quantiles else fit_linreg(lm))
        return self

    def predict(self, windows, sectors):
        X = lag_design(np.asarray(windows, dtype=float),
                       np.asarray(sectors) if self.statics else None)
        n = X.shape[0]
        K = len(QUANTILE_LEVELS) if self.quantiles else None
        out = np.empty((n, len(self.targets), self.H) + ((K,) if K else ()))
        for a, j in enumerate(self.targets):
            for h in range(1, self.H + 1):
                out[:, a, h - 1] = self.heads_[(j, h)].predict(X)
        return out

    def weights(self):
        w = {}
        for (j, h), head in self.heads_.items():
            w[f"W_{j}_{h}"] = head.W
            w[f"b_{j}_{h}"] = head.b
        return w


class _LinearNetModel(GlobalModel):
    kind = ""

    def __init__(self, targets, B=12, H=4, quantiles=True, statics=False, cfg=None,
                 revin: bool = False, learn_affine: bool = True, kernel: int = 10):
        super().__init__(targets, B, H, quantiles, statics, cfg)
        self.revin = bool(revin)
        self.learn_affine = bool(learn_affine)
        self.kernel = int(kernel)

    def config(self):
        return {**super().config(), "revin": self.revin}

    def training_windows(self, tensor, end):
        comp, origin = window_origins(tensor, self.B, self.H, end)
        idx = origin[:, None] + np.arange(-self.B + 1, self.H + 1)[None, :]
        w = tensor[comp[:, None], idx].transpose(0, 2, 1)  # (n, C, B+H)
        return comp, w[..., :self.B], w[..., self.B:]

    def fit(self, tensor, sectors, company_ids, end, seed=0, log_batches=False):
        tensor = np.asarray(tensor, dtype=float)
        company_ids = np.asarray(company_ids)
        sectors = np.asarray(sectors, dtype=int)
        comp, X, Y = self.training_windows(tensor, end)
        if comp.size == 0:
            raise NoValidWindows(f"no complete {self.B}+{self.H} windows up to index {end}")
        C = tensor.shape[2]
        K = len(QUANTILE_LEVELS) if self.quantiles else 1
        n_sec = int(sectors.max()) + 1 if self.statics else 0
        self.net_ = LinearNet(self.kind, self.B, self.H, C, K, self.levels, self.revin,
                              self.learn_affine, n_sec, self.kernel, seed)
        held = company_split(company_ids, self.cfg.val_fraction, seed)[comp]
        tr = ~held
        if not tr.any():
            tr, held = np.ones_like(held), np.zeros_like(held)
        self.holdout_ = set(company_ids[comp[held]])
        groups = sectors[comp] if self.statics else np.zeros(comp.size, dtype=int)
        self.history_ = train(self.net_, X[tr], Y[tr], groups[tr], company_ids[comp[tr]],
                              self.cfg, seed, X[held], Y[held], groups[held],
                              log_batches=log_batches)
        return self

    def predict(self, windows, sectors):
        x = np.asarray(windows, dtype=float).transpose(0, 2, 1)
        groups = np.asarray(sectors, dtype=int) if self.statics else None
        out = self.net_.predict(x, groups)[:, self.targets]
        return out if self.quantiles else out[..., 0]

    def weights(self):
        return self.net_.params


class DLinearModel(_LinearNetModel):
    name = "dlinear"
    kind = "dlinear"


class NLinearModel(_LinearNetModel):
    name = "nlinear"
    kind = "nlinear"


class RevinForecaster:
    """Wrap ``f((n, C, B)) -> (n, C, H)`` with per-instance normalization.

    The lookback is normalized per instance and channel, ``f`` forecasts in the
    normalized space and its outputs are mapped back with the same statistics.
    """

    def __init__(self, f, gamma=1.0, beta=0.0):
        self.f = f
        self.gamma, self.beta = gamma, beta

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        g = np.asarray(self.gamma, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        if g.ndim:
            g, b = g[None, :, None], b[None, :, None]
        z, stats = revin_normalize(x, g, b)
        return revin_denormalize(self.f(z), stats, g, b)


def revin_wrap(model, learn_affine: bool = True):
    """Return ``model`` with RevIN applied.

    DLinear/NLinear models get RevIN inside the network so that the affine
    parameters train jointly when ``learn_affine`` is set. Any other callable
    forecaster is wrapped with fixed ``gamma=1, beta=0``.
    """
    if isinstance(model, _LinearNetModel):
        m = copy.copy(model)
        m.revin, m.learn_affine = True, bool(learn_affine)
        for attr in ("net_", "history_", "holdout_"):
            m.__dict__.pop(attr, None)
        return m
    if callable(model):
        return RevinForecaster(model)
    raise TypeError(f"cannot wrap {type(model).__name__} with RevIN")


GLOBAL_MODELS = {cls.name: cls for cls in (LinearRegressionModel, DLinearModel, NLinearModel)}
