"""Minibatch training utilities: losses, AdamW, company holdout split, and the loop."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteLoss
from ..prob import QUANTILE_LEVELS

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "pinball_loss",
    "pinball_grad",
    "mse_loss",
    "AdamW",
    "company_split",
    "train",
    "TrainResult",
]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 100
    patience: int = 3
    lr: float = 1e-4
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip: float = 1.0
    val_fraction: float = 0.1


def pinball_loss(y, q_pred, levels=QUANTILE_LEVELS) -> float:
    """Mean pinball loss; ``q_pred`` has a trailing quantile axis aligned with ``levels``."""
    diff = np.asarray(y, dtype=float)[..., None] - np.asarray(q_pred, dtype=float)
    lv = np.asarray(levels, dtype=float)
    return float(np.mean(np.maximum(lv * diff, (lv - 1.0) * diff)))


def pinball_grad(y, q_pred, levels=QUANTILE_LEVELS) -> np.ndarray:
    """Gradient of :func:`pinball_loss` with respect to ``q_pred``."""
    diff = np.asarray(y, dtype=float)[..., None] - q_pred
    lv = np.asarray(levels, dtype=float)
    g = np.where(diff > 0, -lv, 1.0 - lv)
    return g / diff.size


def mse_loss(y, pred) -> float:
    return float(np.mean((np.asarray(y) - pred) ** 2))


def mse_grad(y, pred) -> np.ndarray:
    return 2.0 * (pred - y) / pred.size


class AdamW:
    """Adam with decoupled weight decay, operating on a dict of arrays in place."""

    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, frozen=()):
        c = self.cfg
        self.t += 1
        b1t, b2t = 1 - c.beta1**self.t, 1 - c.beta2**self.t
        for k, g in grads.items():
            if k in frozen:
                continue
            p = params[k]
            p *= 1.0 - c.lr * c.weight_decay
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            p -= c.lr * (self.m[k] / b1t) / (np.sqrt(self.v[k] / b2t) + c.adam_eps)


def clip_grads(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm and norm > max_norm:
        for g in grads.values():
            g *= max_norm / norm
    return norm


def company_split(company_ids, fraction: float = 0.1, seed: int = 0) -> np.ndarray:
    """Boolean mask of held-out companies from a seeded hash of each id.

    Membership depends only on ``(seed, company_id)``, never on order.
    """
    out = np.empty(len(company_ids), dtype=bool)
    for i, cid in enumerate(company_ids):
        digest = hashlib.sha256(f"{seed}:{cid}".encode()).digest()
        out[i] = int.from_bytes(digest[:8], "big") / 2**64 < fraction
    return out


@dataclass
class TrainResult:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    train_companies: set = field(default_factory=set)
    batch_companies: list | None = None


def train(net, X, Y, groups, company_of, cfg: TrainConfig, seed: int,
          val_X=None, val_Y=None, val_groups=None, log_batches: bool = False) -> TrainResult:
    """Fit ``net`` in place by minibatch AdamW with early stopping.

    ``net`` exposes ``params`` (dict of arrays), ``loss_and_grad(X, Y, groups)``
    and ``loss(X, Y, groups)``. ``company_of`` gives the company id of every
    training row and is only used for the batch log.
    """
    rng = np.random.default_rng(seed)
    opt = AdamW(net.params, cfg)
    res = TrainResult(batch_companies=[] if log_batches else None)
    have_val = val_X is not None and len(val_X) > 0
    best_val, best_params, stale = np.inf, None, 0
    n = len(X)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, grads = net.loss_and_grad(X[idx], Y[idx], groups[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"non-finite loss {loss} at epoch {epoch}, batch {b} "
                                    f"(companies {sorted(set(company_of[idx]))[:5]})")
            clip_grads(grads, cfg.clip)
            opt.step(net.params, grads, frozen=getattr(net, "frozen", ()))
            total += loss * len(idx)
            seen = set(company_of[idx])
            res.train_companies |= seen
            if log_batches:
                res.batch_companies.append(frozenset(seen))
        res.train_loss.append(total / max(n, 1))
        if have_val:
            vl = net.loss(val_X, val_Y, val_groups)
            res.val_loss.append(vl)
            if vl < best_val - 1e-12:
                best_val, stale, res.best_epoch = vl, 0, epoch
                best_params = {k: v.copy() for k, v in net.params.items()}
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.debug("early stop at epoch %d", epoch)
                    break
        else:
            res.best_epoch = epoch
    if best_params is not None:
        for k, v in best_params.items():
            net.params[k][...] = v
    return res
