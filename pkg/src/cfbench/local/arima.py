"""ARMA / ARIMA estimation by conditional sum of squares, and stepwise AutoARIMA.

The process is written around its mean ``mu``::

    (x_t - mu) = sum_i phi_i (x_{t-i} - mu) + eps_t + sum_j psi_j eps_{t-j}

Residuals are computed conditionally on the first ``cond`` observations with
pre-sample innovations set to zero. Parameters minimize the mean squared
residual with a Nelder-Mead simplex started at zero coefficients and the sample
mean, plus jittered restarts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter

from ..errors import NonConvergence, SeriesTooShort, UnstableParams
from .base import LocalForecast, LocalModel, as_series
from .baselines import ARMeanModel

__all__ = [
    "ArmaParams",
    "fit_arma",
    "forecast_arma",
    "arma_residuals",
    "impulse_response",
    "difference",
    "difference_anchors",
    "integrate",
    "aicc",
    "select_d",
    "auto_arima",
    "ARMAModel",
    "ARIMAModel",
    "AutoARIMAModel",
]

MAX_ITER = 2000
F_TOL = 1e-8
X_TOL = 1e-6
N_RESTARTS = 3
_PENALTY = 1e12


@dataclass(frozen=True)
class ArmaParams:
    mu: float
    phi: tuple[float, ...]
    psi: tuple[float, ...]
    sigma2: float
    cond: int = 0
    n_obs: int = 0
    sse: float = float("nan")

    @property
    def p(self) -> int:
        return len(self.phi)

    @property
    def q(self) -> int:
        return len(self.psi)

    @property
    def n_resid(self) -> int:
        return self.n_obs - self.cond


def min_length(p: int, q: int) -> int:
    return 4 * (p + q) + 10


def _stable(coefs, sign: float) -> bool:
    """Roots of ``1 + sign * sum c_i z^i`` lie outside the unit circle."""
    c = np.asarray(coefs, dtype=float)
    if c.size == 0 or not np.any(c):
        return True
    return bool(np.max(np.abs(np.roots(np.r_[1.0, sign * c]))) < 1.0)


def max_inverse_root(coefs, sign: float) -> float:
    c = np.asarray(coefs, dtype=float)
    if c.size == 0 or not np.any(c):
        return 0.0
    return float(np.max(np.abs(np.roots(np.r_[1.0, sign * c]))))


def _poly_roots(coefs, sign: float) -> np.ndarray:
    c = np.asarray(coefs, dtype=float)
    if c.size == 0 or not np.any(c):
        return np.empty(0, dtype=complex)
    # np.roots wants the highest power first
    return np.roots(np.r_[1.0, sign * c][::-1])


def common_factor_gap(phi, psi) -> float:
    """Smallest distance between an AR root and an MA root (inf if none)."""
    ra, rm = _poly_roots(phi, -1.0), _poly_roots(psi, 1.0)
    if ra.size == 0 or rm.size == 0:
        return float("inf")
    return float(np.min(np.abs(ra[:, None] - rm[None, :])))


def ar_stationary(phi) -> bool:
    return _stable(phi, -1.0)


def ma_invertible(psi) -> bool:
    return _stable(psi, 1.0)


def arma_residuals(x, mu, phi, psi, cond: int | None = None) -> np.ndarray:
    """Innovations for t >= ``cond`` (zeros before), given the parameters."""
    x = np.asarray(x, dtype=float)
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    p = phi.size
    cond = p if cond is None else cond
    w = x - mu
    n = w.size
    a = w[cond:].copy()
    for i in range(1, p + 1):
        a -= phi[i - 1] * w[cond - i:n - i]
    e = lfilter([1.0], np.r_[1.0, psi], a) if psi.size else a
    out = np.zeros(n)
    out[cond:] = e
    return out


def fit_arma(
    x,
    p: int,
    q: int,
    enforce_stationarity: bool = True,
    cond: int | None = None,
    seed: int = 0,
    restarts: int = N_RESTARTS,
) -> ArmaParams:
    """Estimate ARMA(p, q) by conditional sum of squares.

    ``cond`` (default ``p``) is the number of leading observations conditioned
    on. Raises :class:`NonConvergence` when no restart meets the tolerance
    within the iteration cap, and :class:`UnstableParams` when stationarity is
    enforced but the best estimate has AR roots inside the unit circle.
    """
    x = as_series(x)
    if x.size < min_length(p, q):
        raise SeriesTooShort(f"ARMA({p},{q}) needs {min_length(p, q)} observations, got {x.size}")
    cond = p if cond is None else int(cond)
    if cond < p:
        raise ValueError("cond must be at least p")
    n_res = x.size - cond
    if p == 0 and q == 0:
        mu = float(x.mean())
        e = x[cond:] - mu
        sse = float(e @ e)
        return ArmaParams(mu, (), (), max(sse / n_res, 0.0), cond, x.size, sse)

    scale = float(x.std()) or 1.0
    mu0 = float(x.mean())

    def objective(theta):
        phi, psi = theta[1:1 + p], theta[1 + p:]
        if (enforce_stationarity and not ar_stationary(phi)) or not ma_invertible(psi):
            return _PENALTY
        e = arma_residuals(x, theta[0], phi, psi, cond)[cond:]
        val = float(e @ e) / n_res / scale**2
        return val if np.isfinite(val) else _PENALTY

    rng = np.random.default_rng(seed)
    k = 1 + p + q
    best, any_converged = None, False
    for r in range(restarts):
        start = np.zeros(k)
        start[0] = mu0
        if r > 0:
            start[0] += rng.normal(0.0, 0.1 * scale)
            start[1:] = rng.normal(0.0, 0.1, size=k - 1)
        simplex = np.tile(start, (k + 1, 1))
        simplex[1:, 0] += np.r_[0.1 * scale, np.zeros(k - 1)]
        simplex[np.arange(2, k + 1), np.arange(1, k)] += 0.1
        res = minimize(objective, start, method="Nelder-Mead",
                       options={"maxiter": MAX_ITER, "maxfev": 2 * MAX_ITER,
                                "xatol": X_TOL, "fatol": F_TOL,
                                "initial_simplex": simplex})
        any_converged |= bool(res.success)
        if res.success and (best is None or res.fun < best.fun):
            best = res
    if not any_converged or best.fun >= _PENALTY:
        raise NonConvergence(f"ARMA({p},{q}) did not converge in {restarts} restarts")
    theta = best.x
    phi, psi = tuple(map(float, theta[1:1 + p])), tuple(map(float, theta[1 + p:]))
    if enforce_stationarity and not ar_stationary(phi):
        raise UnstableParams(f"AR roots inside the unit circle: phi={phi}")
    e = arma_residuals(x, theta[0], phi, psi, cond)[cond:]
    sse = float(e @ e)
    return ArmaParams(float(theta[0]), phi, psi, sse / n_res, cond, x.size, sse)


def impulse_response(phi, psi, n: int) -> np.ndarray:
    """MA(infinity) weights c_0..c_{n-1} of the ARMA process."""
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    c = np.zeros(n)
    for j in range(n):
        v = 1.0 if j == 0 else (psi[j - 1] if j <= psi.size else 0.0)
        for i in range(1, min(j, phi.size) + 1):
            v += phi[i - 1] * c[j - i]
        c[j] = v
    return c


def _recursion(w, e, phi, psi, h, shocks=None):
    """Extend centered series ``w`` (innovations ``e``) by ``h`` steps."""
    p, q = len(phi), len(psi)
    n = len(w)
    ww = np.r_[w, np.zeros(h)]
    ee = np.r_[e, np.zeros(h) if shocks is None else shocks]
    for t in range(n, n + h):
        v = ee[t] if shocks is not None else 0.0
        for i in range(1, p + 1):
            if t - i >= 0:
                v += phi[i - 1] * ww[t - i]
        for j in range(1, q + 1):
            if t - j >= 0:
                v += psi[j - 1] * ee[t - j]
        ww[t] = v
    return ww[n:]


def forecast_arma(m: ArmaParams, x, h: int) -> LocalForecast:
    """h-step means (future innovations zero) and Gaussian predictive variances."""
    x = np.asarray(x, dtype=float)
    e = arma_residuals(x, m.mu, m.phi, m.psi, m.cond)
    mean = m.mu + _recursion(x - m.mu, e, m.phi, m.psi, h)
    c = impulse_response(m.phi, m.psi, h)
    var = m.sigma2 * np.cumsum(c**2)
    return LocalForecast(mean, var)


def sample_arma(m: ArmaParams, x, h: int, n: int, rng) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    e = arma_residuals(x, m.mu, m.phi, m.psi, m.cond)
    sd = np.sqrt(max(m.sigma2, 0.0))
    out = np.empty((n, h))
    for k in range(n):
        shocks = rng.normal(0.0, sd, size=h)
        out[k] = m.mu + _recursion(x - m.mu, e, m.phi, m.psi, h, shocks)
    return out


# ----------------------------------------------------------- differencing


def difference(x, d: int = 1) -> np.ndarray:
    return np.diff(np.asarray(x, dtype=float), n=d) if d else np.asarray(x, dtype=float)


def difference_anchors(x, d: int) -> list[float]:
    """Last value of the series at each differencing level 0..d-1."""
    x = np.asarray(x, dtype=float)
    return [float(np.diff(x, n=k)[-1]) for k in range(d)]


def integrate(f, anchors) -> np.ndarray:
    """Undo ``len(anchors)`` differences of a forecast path ``f``.

    ``anchors[k]`` is the last observed value of the k-times differenced series.
    """
    out = np.asarray(f, dtype=float)
    for a in reversed(list(anchors)):
        out = a + np.cumsum(out, axis=-1)
    return out


def _integrated_weights(c: np.ndarray, d: int) -> np.ndarray:
    for _ in range(d):
        c = np.cumsum(c)
    return c


# ---------------------------------------------------------------- models


def _affine_fit(x):
    t = np.arange(x.size, dtype=float)
    slope, intercept = np.polyfit(t, x, 1) if x.size > 1 else (0.0, float(x[0]))
    return float(intercept), float(slope)


class ARIMAModel(LocalModel):
    """ARIMA(p, d, q) with optional affine detrending before differencing."""

    name = "arima"
    probabilistic = True

    def __init__(self, p: int = 1, d: int = 0, q: int = 0, trend: bool = False,
                 enforce_stationarity: bool = True, cond: int | None = None, seed: int = 0):
        self.p, self.d, self.q = int(p), int(d), int(q)
        self.trend = bool(trend)
        self.enforce_stationarity = enforce_stationarity
        self.cond = cond
        self.seed = seed

    def config(self):
        return {"p": self.p, "d": self.d, "q": self.q, "trend": self.trend}

    def fit(self, x):
        x = as_series(x)
        if x.size <= self.d:
            raise SeriesTooShort(f"cannot difference {x.size} values {self.d} times")
        self.n_ = x.size
        if self.trend:
            self.line_ = _affine_fit(x)
            x = x - (self.line_[0] + self.line_[1] * np.arange(x.size))
        else:
            self.line_ = (0.0, 0.0)
        self.anchors_ = difference_anchors(x, self.d)
        self.z_ = difference(x, self.d)
        self.arma_ = fit_arma(self.z_, self.p, self.q, self.enforce_stationarity,
                              cond=self.cond, seed=self.seed)
        return self

    def _line(self, h):
        t = np.arange(self.n_, self.n_ + h)
        return self.line_[0] + self.line_[1] * t

    def forecast(self, h):
        f = forecast_arma(self.arma_, self.z_, h)
        mean = integrate(f.mean, self.anchors_) + self._line(h)
        c = _integrated_weights(impulse_response(self.arma_.phi, self.arma_.psi, h), self.d)
        return LocalForecast(mean, self.arma_.sigma2 * np.cumsum(c**2))

    def sample(self, h, n, rng):
        paths = sample_arma(self.arma_, self.z_, h, n, rng)
        return integrate(paths, self.anchors_) + self._line(h)

    def params(self):
        a = self.arma_
        return {"mu": a.mu, "phi": list(a.phi), "psi": list(a.psi), "sigma2": a.sigma2,
                "line": list(self.line_), "anchors": list(self.anchors_)}


class ARMAModel(ARIMAModel):
    name = "arma"

    def __init__(self, p: int = 1, q: int = 1, trend: bool = False, **kw):
        super().__init__(p, 0, q, trend=trend, **kw)

    def config(self):
        return {"p": self.p, "q": self.q, "trend": self.trend}


# ------------------------------------------------------------- AutoARIMA


def aicc(sse: float, n: int, k: int) -> float:
    """Small-sample corrected AIC from the conditional sum of squares."""
    if n - k - 1 <= 0:
        return float("inf")
    if sse <= 0:
        return float("-inf")
    return n * np.log(sse / n) + 2 * k + 2 * k * (k + 1) / (n - k - 1)


def select_d(x, max_d: int = 2, min_drop: float = 0.5) -> int:
    """Differencing order by the standard-deviation plateau rule.

    Difference once more only while doing so shrinks the sample standard
    deviation by at least the fraction ``min_drop``.
    """
    x = np.asarray(x, dtype=float)
    d = 0
    cur = x
    while d < max_d and cur.size > 2:
        nxt = np.diff(cur)
        s_cur, s_nxt = cur.std(), nxt.std()
        # roundoff-level spread means the series is already constant
        tiny = 1e-12 * max(1.0, float(np.abs(cur).max()))
        if not s_cur > tiny or s_nxt > (1.0 - min_drop) * s_cur:
            break
        d += 1
        cur = nxt
    return d


START_ORDERS = ((2, 2), (1, 1), (0, 0), (1, 0), (0, 1))
# Candidates with an AR or MA root this close to the unit circle are discarded;
# on short noisy series they are near-cancelling spurious fits.
ROOT_MARGIN = 0.99
# Candidates whose AR and MA polynomials nearly share a root are redundant with
# the lower order and are discarded as well.
FACTOR_GAP = 0.15


@dataclass
class AutoArimaResult:
    order: tuple[int, int, int] | None
    model: LocalModel
    scores: dict = field(default_factory=dict)


def auto_arima(x, max_p: int = 4, max_q: int = 4, max_d: int = 2,
               min_drop: float = 0.5, seed: int = 0) -> AutoArimaResult:
    """Stepwise ARIMA order search minimizing AICc.

    Falls back to ARMean(1) (``order=None``) when no candidate order can be fitted.
    """
    x = as_series(x)
    d = select_d(x, max_d, min_drop)
    z = difference(x, d)
    if np.ptp(z) <= 1e-12 * max(1.0, float(np.abs(z).max())):
        # nothing left to model; every candidate would tie at zero error
        return AutoArimaResult((0, d, 0), ARIMAModel(0, d, 0, seed=seed).fit(x), {})
    cond = min(max_p, max(0, (z.size - 10) // 4))
    scores: dict[tuple[int, int], float] = {}

    def score(p, q):
        if (p, q) in scores:
            return scores[(p, q)]
        s = float("inf")
        if p <= cond and z.size >= min_length(p, q):
            try:
                m = fit_arma(z, p, q, cond=cond, seed=seed)
                if max(max_inverse_root(m.phi, -1.0),
                       max_inverse_root(m.psi, 1.0)) <= ROOT_MARGIN \
                        and common_factor_gap(m.phi, m.psi) >= FACTOR_GAP:
                    s = aicc(m.sse, m.n_resid, p + q + 2)
            except (NonConvergence, UnstableParams, SeriesTooShort):
                pass
        scores[(p, q)] = s
        return s

    starts = [(p, q) for p, q in START_ORDERS if p <= max_p and q <= max_q]
    best = min(starts, key=lambda o: (score(*o), o[0] + o[1]))
    while scores[best] < float("inf") and scores[best] > float("-inf"):
        p0, q0 = best
        moves = [(p0 + a, q0 + b) for a in (-1, 0, 1) for b in (-1, 0, 1)
                 if (a, b) != (0, 0) and (a == b or a == 0 or b == 0)]
        moves = [(p, q) for p, q in moves if 0 <= p <= max_p and 0 <= q <= max_q]
        cand = min(moves, key=lambda o: (score(*o), o[0] + o[1]), default=None)
        if cand is None or not scores[cand] < scores[best]:
            break
        best = cand
    if scores[best] == float("inf"):
        return AutoArimaResult(None, ARMeanModel(1).fit(x), scores)
    p, q = best
    model = ARIMAModel(p, d, q, cond=cond, seed=seed).fit(x)
    return AutoArimaResult((p, d, q), model, scores)


class AutoARIMAModel(LocalModel):
    name = "autoarima"
    probabilistic = True

    def __init__(self, max_p: int = 4, max_q: int = 4, max_d: int = 2,
                 min_drop: float = 0.5, seed: int = 0):
        self.max_p, self.max_q, self.max_d = max_p, max_q, max_d
        self.min_drop = min_drop
        self.seed = seed

    def config(self):
        return {"max_p": self.max_p, "max_q": self.max_q, "max_d": self.max_d}

    def fit(self, x):
        self.result_ = auto_arima(x, self.max_p, self.max_q, self.max_d,
                                  self.min_drop, self.seed)
        self.order_ = self.result_.order
        return self

    def forecast(self, h):
        return self.result_.model.forecast(h)

    def sample(self, h, n, rng):
        return self.result_.model.sample(h, n, rng)

    @property
    def probabilistic_fit(self) -> bool:
        return self.order_ is not None

    def params(self):
        return {"order": self.order_, **self.result_.model.params()}
