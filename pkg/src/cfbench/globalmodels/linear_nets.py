"""DLinear and NLinear with optional RevIN, trained with hand-written gradients.

Both map a lookback of ``B`` steps to ``H`` steps per channel with weights
shared across channels. Inputs are ``(n, C, B)`` arrays, outputs
``(n, C, H, K)`` with ``K = 1`` for point heads.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "REVIN_EPS",
    "revin_stats",
    "revin_normalize",
    "revin_denormalize",
    "moving_average_matrix",
    "LinearNet",
]

REVIN_EPS = 1e-5


def revin_stats(x: np.ndarray, eps: float = REVIN_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Per-instance, per-channel mean and ``std + eps`` over the last axis."""
    m = x.mean(axis=-1, keepdims=True)
    return m, x.std(axis=-1, keepdims=True) + eps


def revin_normalize(x, gamma=1.0, beta=0.0, eps: float = REVIN_EPS):
    """``gamma * (x - mean) / (std + eps) + beta``; returns the values and the stats."""
    x = np.asarray(x, dtype=float)
    m, d = revin_stats(x, eps)
    return gamma * (x - m) / d + beta, (m, d)


def revin_denormalize(z, stats, gamma=1.0, beta=0.0):
    m, d = stats
    return (np.asarray(z, dtype=float) - beta) / gamma * d + m


def moving_average_matrix(B: int, kernel: int) -> np.ndarray:
    """``A`` such that ``x @ A`` is the edge-replicated moving average of ``x``.

    The series is padded with ``(kernel-1)//2`` copies of its first value and
    ``kernel//2`` copies of its last, then averaged with a window of ``kernel``.
    """
    front, back = (kernel - 1) // 2, kernel // 2
    src = np.r_[np.zeros(front, int), np.arange(B), np.full(back, B - 1)]
    A = np.zeros((B, B))
    for t in range(B):
        for j in src[t:t + kernel]:
            A[j, t] += 1.0 / kernel
    return A


class LinearNet:
    """Shared-weight linear forecaster, ``kind`` in {'dlinear', 'nlinear'}.

    Parameters (dict ``params``):

    - ``W`` (B, H*K) and ``b`` (H*K,): NLinear map, or the seasonal branch of DLinear
    - ``Wt``, ``bt``: DLinear trend branch
    - ``E`` (S, H*K): per-sector output bias when statics are used
    - ``gamma``, ``beta`` (C,): RevIN affine when RevIN is on
    """

    def __init__(self, kind: str, B: int, H: int, C: int, K: int = 1, levels=None,
                 revin: bool = False, learn_affine: bool = True, n_sectors: int = 0,
                 kernel: int = 10, seed: int = 0):
        if kind not in ("dlinear", "nlinear"):
            raise ValueError(f"unknown kind {kind!r}")
        self.kind, self.B, self.H, self.C, self.K = kind, B, H, C, K
        self.levels = None if levels is None else np.asarray(levels, dtype=float)
        self.revin, self.learn_affine = revin, learn_affine
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(B)
        out = H * K
        self.params = {"W": rng.uniform(-bound, bound, (B, out)),
                       "b": rng.uniform(-bound, bound, out)}
        if kind == "dlinear":
            self.A = moving_average_matrix(B, kernel)
            self.params["Wt"] = rng.uniform(-bound, bound, (B, out))
            self.params["bt"] = rng.uniform(-bound, bound, out)
        if n_sectors:
            self.params["E"] = np.zeros((n_sectors, out))
        if revin:
            self.params["gamma"] = np.ones(C)
            self.params["beta"] = np.zeros(C)
        self.frozen = () if (learn_affine or not revin) else ("gamma", "beta")

    # ------------------------------------------------------------------ forward

    def forward(self, x: np.ndarray, groups=None):
        """``x`` (n, C, B) -> raw outputs (n, C, H, K) and a cache for backward."""
        p = self.params
        cache = {"x": x, "groups": groups}
        if self.revin:
            m, d = revin_stats(x)
            xn = (x - m) / d
            g, bt = p["gamma"][None, :, None], p["beta"][None, :, None]
            z = g * xn + bt
            cache.update(m=m, d=d, xn=xn)
        else:
            z = x
        if self.kind == "nlinear":
            last = z[..., -1:]
            u = z - last
            o = u @ p["W"] + p["b"] + last
            cache["u"] = u
        else:
            trend = z @ self.A
            seas = z - trend
            o = seas @ p["W"] + p["b"] + trend @ p["Wt"] + p["bt"]
            cache.update(trend=trend, seas=seas)
        if "E" in p:
            o = o + p["E"][groups][:, None, :]
        cache["o"] = o
        if self.revin:
            out = (o - p["beta"][None, :, None]) / p["gamma"][None, :, None] * cache["d"] + cache["m"]
        else:
            out = o
        return out.reshape(x.shape[0], self.C, self.H, self.K), cache

    def predict(self, x, groups=None) -> np.ndarray:
        out, _ = self.forward(x, groups)
        if self.levels is not None:
            out = np.sort(out, axis=-1)
        return out

    # ----------------------------------------------------------------- backward

    def backward(self, cache, gout: np.ndarray) -> dict:
        """Gradients of the loss given ``gout = dL/d(outputs)`` (n, C, H, K)."""
        p = self.params
        n = gout.shape[0]
        gout = gout.reshape(n, self.C, self.H * self.K)
        grads = {}
        if self.revin:
            gam = p["gamma"][None, :, None]
            scale = cache["d"] / gam
            go = gout * scale
            # out = (o - beta) / gamma * d + m
            grads["beta"] = -go.sum(axis=(0, 2))
            grads["gamma"] = -(gout * (cache["o"] - p["beta"][None, :, None])
                               * cache["d"] / gam**2).sum(axis=(0, 2))
        else:
            go = gout
        flat = go.reshape(-1, go.shape[-1])
        grads["b"] = flat.sum(axis=0)
        if "E" in p:
            gE = np.zeros_like(p["E"])
            np.add.at(gE, cache["groups"], go.sum(axis=1))
            grads["E"] = gE
        if self.kind == "nlinear":
            u = cache["u"]
            grads["W"] = u.reshape(-1, self.B).T @ flat
            du = go @ p["W"].T
            dz = du.copy()
            dz[..., -1] += go.sum(axis=-1) - du.sum(axis=-1)
        else:
            grads["W"] = cache["seas"].reshape(-1, self.B).T @ flat
            grads["Wt"] = cache["trend"].reshape(-1, self.B).T @ flat
            grads["bt"] = grads["b"].copy()
            ds = go @ p["W"].T
            dt = go @ p["Wt"].T
            dz = ds - ds @ self.A.T + dt @ self.A.T
        if self.revin:
            grads["gamma"] += (dz * cache["xn"]).sum(axis=(0, 2))
            grads["beta"] += dz.sum(axis=(0, 2))
        return grads

    # -------------------------------------------------------------------- loss

    def _loss_grad(self, out, Y):
        if self.levels is None:
            diff = out[..., 0] - Y
            return float(np.mean(diff**2)), (2.0 * diff / diff.size)[..., None]
        d = Y[..., None] - out
        lv = self.levels
        loss = float(np.mean(np.maximum(lv * d, (lv - 1.0) * d)))
        return loss, np.where(d > 0, -lv, 1.0 - lv) / d.size

    def loss(self, X, Y, groups=None) -> float:
        out, _ = self.forward(X, groups)
        return self._loss_grad(out, Y)[0]

    def loss_and_grad(self, X, Y, groups=None):
        """``X`` (n, C, B), ``Y`` (n, C, H)."""
        out, cache = self.forward(X, groups)
        loss, g = self._loss_grad(out, Y)
        return loss, self.backward(cache, g)
