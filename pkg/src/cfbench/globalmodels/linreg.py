"""Lagged linear regression: OLS point heads and pinball-trained quantile heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..prob import QUANTILE_LEVELS
from .lag import LagMatrix
from .train import TrainConfig, company_split, pinball_grad, pinball_loss, train

__all__ = ["LinearHead", "fit_linreg", "fit_quantile_linreg", "RIDGE_JITTER"]

RIDGE_JITTER = 1e-8


@dataclass(frozen=True)
class LinearHead:
    """``predict(X) = X @ W + b``; one output column per quantile level (or one)."""

    W: np.ndarray
    b: np.ndarray
    levels: np.ndarray | None = None

    def raw(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.W + self.b

    def predict(self, X) -> np.ndarray:
        """Point values ``(n,)`` or rearranged quantiles ``(n, K)``."""
        out = self.raw(X)
        if self.levels is None:
            return out[:, 0]
        return np.sort(out, axis=1)


def _ols(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    n, p = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    A = Xa.T @ Xa + RIDGE_JITTER * np.eye(p + 1)
    w = np.linalg.solve(A, Xa.T @ y)
    return w[:-1], float(w[-1])


def fit_linreg(lm: LagMatrix) -> LinearHead:
    """OLS via the normal equations with a tiny ridge jitter for solvability."""
    w, b = _ols(lm.X, lm.y)
    return LinearHead(w[:, None], np.array([b]))


class _QuantileLinear:
    def __init__(self, W, b, levels):
        self.params = {"W": W, "b": b}
        self.levels = levels

    def _pred(self, X):
        return X @ self.params["W"] + self.params["b"]

    def loss(self, X, Y, groups=None):
        return pinball_loss(Y, self._pred(X), self.levels)

    def loss_and_grad(self, X, Y, groups=None):
        P = self._pred(X)
        G = pinball_grad(Y, P, self.levels)
        return pinball_loss(Y, P, self.levels), {"W": X.T @ G, "b": G.sum(axis=0)}


def fit_quantile_linreg(lm: LagMatrix, levels=QUANTILE_LEVELS,
                        cfg: TrainConfig = TrainConfig(), seed: int = 0) -> LinearHead:
    """Linear quantile regression by minibatch AdamW on the pinball loss.

    Every level starts from the OLS solution with its intercept shifted to the
    empirical residual quantile; 10% of companies are held out for early stopping.
    """
    levels = np.asarray(levels, dtype=float)
    w, b = _ols(lm.X, lm.y)
    resid = lm.y - lm.X @ w - b
    W0 = np.repeat(w[:, None], levels.size, axis=1)
    b0 = b + np.quantile(resid, levels)
    net = _QuantileLinear(W0, b0, levels)
    held = company_split(lm.company, cfg.val_fraction, seed)
    tr, va = ~held, held
    if tr.sum() == 0:
        tr, va = np.ones_like(held), np.zeros_like(held)
    groups = np.zeros(len(lm.y), dtype=int)
    train(net, lm.X[tr], lm.y[tr], groups[tr], lm.company[tr], cfg, seed,
          lm.X[va], lm.y[va], groups[va])
    return LinearHead(net.params["W"].copy(), net.params["b"].copy(), levels)
