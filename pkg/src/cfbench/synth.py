"""Synthetic fundamentals panels and the dataset profiler.

Two generation modes:

``direct``
    every feature series is drawn straight from its process (useful for
    checking estimators and the profiler against known laws);
``linkage``
    raw fundamentals: revenues follow a log random walk, assets track revenues
    through a noisy turnover ratio, and every other item is its denominator
    times a ratio process, so income items move with revenue.

Processes: AR(1), trend plus noise, seasonal, and regime shift, each driven by
optionally skewed, heavy-tailed (Student-t) innovations.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import gammaln

from .backtest import MarketData
from .errors import SeriesTooShort
from .panel import (DEFAULT_FEATURES, GICS_SECTORS, REGIONS, Dataset, QuarterId,
                    StaticInfo, dataset_from_arrays)

__all__ = [
    "ProcessSpec",
    "GeneratorSpec",
    "generate",
    "innovations",
    "theoretical_moments",
    "MarketData",
    "generate_market",
    "acf",
    "dominant_seasonality",
    "ProfileReport",
    "profile",
]

PROCESS_KINDS = ("ar1", "trend", "seasonal", "regime", "iid")


@dataclass(frozen=True)
class ProcessSpec:
    kind: str = "ar1"
    mean: float = 0.0
    scale: float = 1.0  # innovation standard deviation
    phi: float = 0.7
    slope: float = 0.02
    period: int = 4
    amplitude: float = 1.0
    shift_prob: float = 0.03
    shift_scale: float = 2.0
    df: float | None = None  # Student-t degrees of freedom; None = Gaussian
    skew: float = 0.0  # in (-1, 1): asymmetric scaling of the two tails

    def __post_init__(self):
        if self.kind not in PROCESS_KINDS:
            raise ValueError(f"unknown process {self.kind!r}")
        if self.df is not None and self.df <= 2:
            raise ValueError("df must exceed 2 for a finite variance")
        if not -1 < self.skew < 1:
            raise ValueError("skew must lie in (-1, 1)")
        if self.kind == "seasonal" and self.period < 2:
            raise ValueError("seasonal period must be >= 2")


DEFAULT_MIX = {"ar1": 0.4, "trend": 0.2, "seasonal": 0.25, "regime": 0.15}


@dataclass(frozen=True)
class GeneratorSpec:
    n_companies: int = 100
    T: int = 59
    start: QuarterId = QuarterId(2009, 1)
    mode: str = "linkage"
    processes: Mapping[str, ProcessSpec] = field(default_factory=dict)
    mix: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_MIX))
    seasonal_periods: tuple[int, ...] = (4, 8, 12)
    df: float | None = 3.0
    skew: float = 0.3
    ratio_noise: float = 0.02
    revenue_growth: float = 0.01
    revenue_vol: float = 0.04
    late_start_share: float = 0.0  # companies whose history starts late

    def __post_init__(self):
        if self.T < 20:
            raise ValueError("T must be at least 20")
        if self.mode not in ("direct", "linkage"):
            raise ValueError("mode must be 'direct' or 'linkage'")
        if self.n_companies < 1:
            raise ValueError("need at least one company")
        object.__setattr__(self, "processes",
                           {k: (v if isinstance(v, ProcessSpec) else ProcessSpec(**v))
                            for k, v in dict(self.processes).items()})
        object.__setattr__(self, "seasonal_periods", tuple(self.seasonal_periods))

    @classmethod
    def from_dict(cls, d: Mapping) -> "GeneratorSpec":
        d = dict(d)
        if "start" in d and not isinstance(d["start"], QuarterId):
            d["start"] = QuarterId.parse(str(d["start"]))
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["start"] = str(self.start)
        out["processes"] = {k: asdict(v) for k, v in self.processes.items()}
        out["seasonal_periods"] = list(self.seasonal_periods)
        return out


# ------------------------------------------------------------- innovations


def _t_positive_mean(df: float) -> float:
    """E[max(t, 0)] for a Student-t variable."""
    return float(np.sqrt(df) * np.exp(gammaln((df - 1) / 2) - gammaln(df / 2))
                 / (2 * np.sqrt(np.pi)))


def innovations(rng: np.random.Generator, size, df: float | None = None,
                skew: float = 0.0) -> np.ndarray:
    """Zero-mean, unit-variance shocks, optionally heavy-tailed and skewed.

    The positive part of a Student-t draw is scaled by ``1+skew`` and the
    negative part by ``1-skew``; the result is standardized analytically.
    """
    if df is None:
        base = rng.standard_normal(size)
        pos_mean, var = 1.0 / np.sqrt(2 * np.pi), 1.0
    else:
        base = rng.standard_t(df, size)
        pos_mean, var = _t_positive_mean(df), df / (df - 2)
    a, b = 1.0 + skew, 1.0 - skew
    e = np.where(base > 0, a * base, b * base)
    mean = (a - b) * pos_mean
    second = (a * a + b * b) / 2 * var
    return (e - mean) / np.sqrt(second - mean**2)


def simulate_process(p: ProcessSpec, T: int, rng: np.random.Generator,
                     burn: int = 100) -> np.ndarray:
    e = p.scale * innovations(rng, T + burn, p.df, p.skew)
    if p.kind == "iid":
        return p.mean + e[burn:]
    if p.kind == "ar1":
        x = np.empty(T + burn)
        prev = 0.0
        for t in range(T + burn):
            prev = p.phi * prev + e[t]
            x[t] = prev
        return p.mean + x[burn:]
    e = e[burn:]
    t = np.arange(T)
    if p.kind == "trend":
        return p.mean + p.slope * t + e
    if p.kind == "seasonal":
        phase = rng.uniform(0, 2 * np.pi)
        return p.mean + p.amplitude * np.cos(2 * np.pi * t / p.period + phase) + e
    # regime: piecewise-constant level with occasional jumps
    jumps = (rng.random(T) < p.shift_prob) * rng.normal(0.0, p.shift_scale, T)
    return p.mean + np.cumsum(jumps) + e


def theoretical_moments(p: ProcessSpec) -> tuple[float, float]:
    """Stationary mean and variance of the direct-mode process ``p``."""
    if p.kind == "iid":
        return p.mean, p.scale**2
    if p.kind == "ar1":
        if abs(p.phi) >= 1:
            raise ValueError("AR(1) is not stationary")
        return p.mean, p.scale**2 / (1 - p.phi**2)
    if p.kind == "seasonal":
        # random phase: the cosine term has mean 0 and variance amplitude^2 / 2
        return p.mean, p.scale**2 + p.amplitude**2 / 2
    raise ValueError(f"{p.kind!r} has no stationary moments")


# --------------------------------------------------------------- generator


# typical level of each item relative to its denominator
_BASE_RATIO = {
    "cost_of_revenues": 0.65, "total_other_operating_expenses": 0.20,
    "capital_expenditure": -0.05, "income_tax_expense": 0.02,
    "total_interest_expense": 0.01, "levered_free_cash_flow": 0.05,
    "cash_from_financing": -0.03, "cash_from_investing": -0.06,
    "total_cash_and_short_term_investments": 0.10, "total_current_assets": 0.40,
    "total_current_liabilities": 0.25, "total_liabilities": 0.60, "total_debt": 0.25,
    "operating_income": 0.10, "net_income": 0.06, "cash_from_operations": 0.12,
    "total_equity": 0.40,
}


def _pick_process(spec: GeneratorSpec, name: str, rng) -> ProcessSpec:
    if name in spec.processes:
        return spec.processes[name]
    kinds = list(spec.mix)
    w = np.array([spec.mix[k] for k in kinds], dtype=float)
    kind = kinds[rng.choice(len(kinds), p=w / w.sum())]
    return ProcessSpec(kind=kind, df=spec.df, skew=spec.skew,
                       period=int(rng.choice(spec.seasonal_periods)),
                       phi=float(rng.uniform(0.5, 0.95)), slope=float(rng.normal(0, 0.03)))


def generate(spec: GeneratorSpec, seed: int = 0, features=DEFAULT_FEATURES) -> Dataset:
    """Draw a synthetic dataset; bit-identical for equal ``(spec, seed)``."""
    rng = np.random.default_rng(seed)
    N, T = spec.n_companies, spec.T
    names = [f.name for f in features]
    vals = np.empty((N, T, len(names)))
    statics = [StaticInfo(int(rng.integers(len(GICS_SECTORS))),
                          REGIONS[int(rng.integers(len(REGIONS)))]) for _ in range(N)]
    for c in range(N):
        if spec.mode == "direct":
            for j, name in enumerate(names):
                vals[c, :, j] = simulate_process(_pick_process(spec, name, rng), T, rng)
            continue
        log_rev = (rng.normal(np.log(1000.0), 1.0)
                   + np.cumsum(spec.revenue_growth
                               + spec.revenue_vol * innovations(rng, T, spec.df, spec.skew)))
        rev = np.exp(log_rev)
        turnover = np.exp(rng.normal(np.log(2.0), 0.3)
                          + 0.05 * simulate_process(ProcessSpec("ar1", phi=0.9), T, rng))
        assets = rev * turnover
        for j, f in enumerate(features):
            if f.name == "total_revenues":
                vals[c, :, j] = rev
            elif f.name == "total_assets":
                vals[c, :, j] = assets
            elif f.denominator == "none":
                vals[c, :, j] = np.nan  # derived below
            else:
                base = _BASE_RATIO.get(f.name, 0.1) * np.exp(rng.normal(0, 0.3))
                shape = simulate_process(_pick_process(spec, f.name, rng), T, rng)
                ratio = base + spec.ratio_noise * shape
                den = rev if f.denominator == "total_revenues" else assets
                vals[c, :, j] = ratio * den
    if spec.mode == "linkage":
        _fill_derived(vals, features, statics)
    if spec.late_start_share > 0:
        late = rng.random(N) < spec.late_start_share
        for c in np.flatnonzero(late):
            vals[c, :int(rng.integers(1, T // 3)), :] = np.nan
    return dataset_from_arrays(vals, features, spec.start,
                               [f"S{c:05d}" for c in range(N)], statics)


def _fill_derived(vals, features, statics):
    """Share of each company's revenue in its sector's total, per quarter."""
    names = [f.name for f in features]
    if "total_revenues" not in names:
        return
    r = names.index("total_revenues")
    sectors = np.array([s.sector for s in statics])
    for j, f in enumerate(features):
        if f.denominator != "none":
            continue
        for s in np.unique(sectors):
            m = sectors == s
            vals[m, :, j] = vals[m, :, r] / vals[m, :, r].sum(axis=0)


# ------------------------------------------------------------------ market


def generate_market(d: Dataset, seed: int = 0, signal_feature: str = "operating_income",
                    strength: float = 0.06, vol: float = 0.08, lead: int = 4) -> MarketData:
    """Prices whose returns are driven by fundamentals ``lead`` quarters ahead.

    Each company's enterprise value is a slowly varying multiple of its
    revenue. Its return over quarter ``t -> t+1`` is ``strength/4`` times the
    cross-sectional z-score of ``signal_feature[t+lead] / EV[t]`` plus noise,
    so a forecaster that knows next year's fundamentals can pick winners.
    """
    rng = np.random.default_rng(seed)
    ten = d.tensor()
    N, T, _ = ten.shape
    rev = ten[:, :, d.feature_index("total_revenues")]
    sig_raw = ten[:, :, d.feature_index(signal_feature)]
    multiple = np.exp(rng.normal(np.log(1.5), 0.3, size=(N, 1))
                      + np.cumsum(rng.normal(0, 0.02, size=(N, T)), axis=1))
    ev = np.abs(rev) * multiple
    ret = np.full((N, T), np.nan)
    common = rng.normal(0.015, 0.04, size=T)
    for t in range(T - 1):
        src = min(t + lead, T - 1)
        s = sig_raw[:, src] / ev[:, t]
        ok = np.isfinite(s)
        z = np.zeros(N)
        if ok.sum() > 1 and np.std(s[ok]) > 0:
            z[ok] = (s[ok] - s[ok].mean()) / s[ok].std()
        ret[:, t + 1] = common[t + 1] + strength / 4 * np.clip(z, -3, 3) \
            + vol / 2 * rng.standard_normal(N)
    price = np.ones((N, T))
    price[:, 1:] = np.cumprod(1 + ret[:, 1:], axis=1)
    price[np.isnan(rev)] = np.nan
    reference = np.r_[1.0, np.cumprod(1 + np.nanmean(ret[:, 1:], axis=0))]
    return MarketData(tuple(d.companies), d.start, price, ev, d.sectors(),
                      tuple(p.statics.region for p in d.panels), reference)


# ----------------------------------------------------------------- profile


def acf(x, nlags: int) -> np.ndarray:
    """Sample autocorrelations for lags 0..nlags (biased estimator)."""
    x = np.asarray(x, dtype=float)
    xc = x - x.mean()
    denom = xc @ xc
    if denom == 0:
        return np.full(nlags + 1, np.nan)
    n = x.size
    return np.array([xc[:n - k] @ xc[k:] / denom for k in range(nlags + 1)])


def dominant_seasonality(x, alpha: float = 0.05, correction: str = "bonferroni",
                         min_lag: int = 2) -> tuple[int | None, np.ndarray]:
    """Strongest significantly positive autocorrelation lag in ``min_lag .. T/2``.

    The band is ``z/sqrt(T)`` with ``z`` the two-sided normal quantile at
    ``alpha``, Bonferroni-corrected for the number of lags tested unless
    ``correction='none'``. Returns ``(lag or None, acf values)``.
    """
    x = np.asarray(x, dtype=float)
    T = x.size
    nlags = T // 2
    r = acf(x, nlags)
    lags = np.arange(min_lag, nlags + 1)
    if lags.size == 0 or np.isnan(r).all():
        return None, r
    m = lags.size if correction == "bonferroni" else 1
    band = stats.norm.ppf(1 - alpha / (2 * m)) / np.sqrt(T)
    vals = r[lags]
    sig = vals > band
    if not sig.any():
        return None, r
    return int(lags[sig][np.argmax(vals[sig])]), r


@dataclass
class ProfileReport:
    moments: pd.DataFrame  # one row per feature
    series: pd.DataFrame  # one row per (company, feature)
    seasonal_hist: dict  # feature -> {lag: count}

    def to_json(self) -> str:
        return json.dumps({
            "moments": json.loads(self.moments.to_json(orient="records")),
            "seasonality": {f: {str(k): v for k, v in sorted(h.items())}
                            for f, h in self.seasonal_hist.items()},
        }, indent=2, sort_keys=True)

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "profile_moments.csv", out / "profile_series.csv", out / "profile.json"]
        self.moments.to_csv(paths[0], index=False, float_format="%.12g")
        self.series.to_csv(paths[1], index=False, float_format="%.12g")
        paths[2].write_text(self.to_json() + "\n", encoding="utf-8")
        return paths


STATIONARY_LAG1 = 0.95


def profile(d: Dataset, min_obs: int = 8, alpha: float = 0.05,
            correction: str = "bonferroni", strict: bool = True) -> ProfileReport:
    """Pooled per-feature moments plus per-series ACF seasonality.

    Constant series have undefined skew/kurtosis; they are flagged and left
    out of the pooled moments. Series with fewer than ``min_obs`` values raise
    :class:`SeriesTooShort` (or are skipped when ``strict`` is false).
    """
    ten = d.tensor()
    rows, pooled = [], {f: [] for f in d.feature_names}
    hist = {f: Counter() for f in d.feature_names}
    for c, cid in enumerate(d.companies):
        for j, name in enumerate(d.feature_names):
            x = ten[c, :, j]
            x = x[~np.isnan(x)]
            if x.size == 0:
                continue
            if x.size < min_obs:
                if strict:
                    raise SeriesTooShort(f"{cid}/{name}: {x.size} observations < {min_obs}")
                continue
            constant = bool(np.ptp(x) == 0)
            lag, r = (None, None) if constant else dominant_seasonality(x, alpha, correction)
            lag1 = float(r[1]) if r is not None else float("nan")
            rows.append({"company": cid, "feature": name, "n": x.size, "constant": constant,
                         "lag1_acf": lag1,
                         "stationary": bool(lag1 < STATIONARY_LAG1) if not constant else None,
                         "dominant_lag": lag if lag is not None else -1})
            if not constant:
                pooled[name].append(x)
                if lag is not None:
                    hist[name][lag] += 1
    mrows = []
    for name in d.feature_names:
        v = np.concatenate(pooled[name]) if pooled[name] else np.empty(0)
        n_const = sum(1 for r in rows if r["feature"] == name and r["constant"])
        if v.size:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                sk, ku = float(stats.skew(v)), float(stats.kurtosis(v, fisher=True))
            mrows.append({"feature": name, "n": v.size, "min": v.min(),
                          "median": float(np.median(v)), "max": v.max(), "mean": v.mean(),
                          "std": v.std(), "skew": sk, "kurtosis": ku,
                          "n_constant": n_const})
        else:
            mrows.append({"feature": name, "n": 0, "n_constant": n_const})
    series = pd.DataFrame(rows, columns=["company", "feature", "n", "constant", "lag1_acf",
                                         "stationary", "dominant_lag"])
    return ProfileReport(pd.DataFrame(mrows), series, {k: dict(v) for k, v in hist.items()})
