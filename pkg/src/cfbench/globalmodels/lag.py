"""Window extraction and lagged design matrices over the whole panel tensor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NoValidWindows
from ..panel import GICS_SECTORS, Dataset

__all__ = ["LagMatrix", "build_lag_matrix", "window_origins", "lag_design", "lag_rows",
           "sector_onehot"]


def window_origins(tensor: np.ndarray, B: int, H: int, end: int | None = None,
                   channels=None) -> tuple[np.ndarray, np.ndarray]:
    """(company, origin) pairs of complete windows.

    ``origin`` is the index of the last lookback quarter; the window covers
    ``origin-B+1 .. origin+H``. Windows must lie at or before index ``end``
    and have no missing value in ``channels`` (all by default).
    """
    N, T, D = tensor.shape
    end = T - 1 if end is None else min(end, T - 1)
    sub = tensor if channels is None else tensor[:, :, list(channels)]
    ok_t = ~np.isnan(sub).any(axis=2)  # (N, T)
    L = B + H
    if end + 1 < L:
        return np.empty(0, int), np.empty(0, int)
    # count of complete quarters in each length-L run ending at t
    c = np.cumsum(np.pad(ok_t[:, :end + 1].astype(int), ((0, 0), (1, 0))), axis=1)
    full = (c[:, L:] - c[:, :-L]) == L  # run ending at t = L-1 .. end
    comp, last = np.nonzero(full)
    origin = last + L - 1 - H
    return comp, origin


def sector_onehot(sectors) -> np.ndarray:
    s = np.asarray(sectors, dtype=int)
    out = np.zeros((s.size, len(GICS_SECTORS)))
    out[np.arange(s.size), s] = 1.0
    return out


def lag_design(windows: np.ndarray, sectors=None) -> np.ndarray:
    """Flatten ``(n, B, D)`` lookback windows into rows (lag-major), optionally
    appending one-hot sector columns."""
    n = windows.shape[0]
    X = windows.reshape(n, -1)
    if sectors is not None:
        X = np.hstack([X, sector_onehot(sectors)])
    return X


def lag_rows(tensor: np.ndarray, B: int, h: int, j: int, end: int):
    """Complete lookback windows with target column ``j`` present ``h`` steps later.

    Returns ``(company, origin, windows (n, B, D), y (n,))``.
    """
    comp, origin = window_origins(tensor, B, 0, end - h)
    if comp.size:
        keep = ~np.isnan(tensor[comp, origin + h, j])
        comp, origin = comp[keep], origin[keep]
    idx = origin[:, None] + np.arange(-B + 1, 1)[None, :]
    return comp, origin, tensor[comp[:, None], idx], tensor[comp, origin + h, j]


@dataclass(frozen=True)
class LagMatrix:
    X: np.ndarray
    y: np.ndarray
    company: np.ndarray
    origin: np.ndarray
    B: int
    h: int
    target: str


def build_lag_matrix(d: Dataset, B: int, H: int, target: str, h: int,
                     end: int | None = None, statics: bool = False,
                     tensor: np.ndarray | None = None) -> LagMatrix:
    """Rows of the last ``B`` lags of every feature against ``target`` ``h`` steps ahead.

    Only windows whose lookback and target lie at or before ``end`` (a calendar
    index) and contain no missing value are kept.
    """
    if not 1 <= h <= H:
        raise ValueError("h must lie in 1..H")
    ten = d.tensor() if tensor is None else tensor
    j = d.feature_index(target)
    N, T, D = ten.shape
    end = T - 1 if end is None else end
    comp, origin, windows, y = lag_rows(ten, B, h, j, end)
    if comp.size == 0:
        raise NoValidWindows(f"no complete windows for B={B}, h={h} up to index {end}")
    sectors = [d.panels[i].statics.sector for i in comp] if statics else None
    return LagMatrix(lag_design(windows, sectors), y,
                     np.array([d.panels[i].company_id for i in comp]), origin, B, h, target)
