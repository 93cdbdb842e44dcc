"""Lookahead factor-model portfolio backtests.

At each rebalance date companies are ranked by a forecast of a fundamental
one year ahead divided by their current enterprise value. The top names fill
sector slots matched to reference weights and are held equally weighted until
the next rebalance.
"""

from __future__ import annotations

import csv
import json
import math
import re
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateReference, MissingPrice, UniverseTooSmall
from .panel import GICS_SECTORS, Dataset, QuarterId

__all__ = [
    "MarketData",
    "StrategySpec",
    "PortfolioState",
    "PerfStats",
    "largest_remainder",
    "select_portfolio",
    "simulate",
    "perf_stats",
    "clairvoyant_forecasts",
    "forecasts_from_store",
    "load_market_csv",
    "load_forecasts_csv",
    "write_market_csv",
    "SIGNALS",
]

SIGNALS = {"operating_income_over_ev": "operating_income",
           "total_revenues_over_ev": "total_revenues"}
SOURCES = ("clairvoyant", "model", "external", "random")
DEFAULT_EXCLUDED = ("Real Estate", "Financials")
LEAD = 4  # one year of quarters


@dataclass(frozen=True)
class MarketData:
    """Quarterly prices and enterprise values aligned with a dataset calendar."""

    company_ids: tuple[str, ...]
    start: QuarterId
    price: np.ndarray  # (N, T) total-return index, NaN where unavailable
    ev: np.ndarray  # (N, T)
    sectors: np.ndarray  # (N,)
    regions: tuple[str, ...]
    reference: np.ndarray  # (T,) reference index level

    @property
    def n_quarters(self) -> int:
        return self.price.shape[1]

    def reference_returns(self) -> np.ndarray:
        return self.reference[1:] / self.reference[:-1] - 1.0


@dataclass(frozen=True)
class StrategySpec:
    signal: str = "operating_income_over_ev"
    source: str = "clairvoyant"
    rebalance: str = "yearly"
    n_stocks: int = 50
    excluded_sectors: tuple[str, ...] = DEFAULT_EXCLUDED
    sector_weights: Mapping[str, float] | None = None
    model: str | None = None  # result-store model label for source='model'
    seed: int = 0

    def __post_init__(self):
        if self.signal not in SIGNALS:
            raise ValueError(f"unknown signal {self.signal!r}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown forecast source {self.source!r}")
        if self.rebalance not in ("quarterly", "yearly"):
            raise ValueError("rebalance must be 'quarterly' or 'yearly'")
        if self.n_stocks < 1:
            raise ValueError("n_stocks must be positive")
        object.__setattr__(self, "excluded_sectors", tuple(self.excluded_sectors))

    @property
    def feature(self) -> str:
        return SIGNALS[self.signal]

    @property
    def step(self) -> int:
        return 1 if self.rebalance == "quarterly" else 4

    @property
    def name(self) -> str:
        src = self.model if self.source == "model" and self.model else self.source
        return f"{src}/{self.signal}/{self.rebalance}"


@dataclass
class PortfolioState:
    holdings: dict = field(default_factory=dict)  # company index -> shares
    cash: float = 0.0
    values: list = field(default_factory=list)  # one per quarter from the start date
    rebalance_weights: list = field(default_factory=list)  # (t, {company: weight})
    trades: list = field(default_factory=list)  # (t, company_id, action, shares, price)
    flags: list = field(default_factory=list)


@dataclass(frozen=True)
class PerfStats:
    final_value: float  # % of initial
    cagr: float  # %
    volatility: float  # annualized, %
    beta: float

    def as_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- selection


def largest_remainder(n: int, weights: Sequence[float]) -> np.ndarray:
    """Integer slots summing to ``n`` proportional to ``weights``.

    Floors of the exact quotas, then one extra slot to each of the largest
    fractional remainders; equal remainders go to the lower index.
    """
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative with a positive sum")
    quota = n * w / w.sum()
    base = np.floor(quota).astype(int)
    rest = n - int(base.sum())
    # rounded so that remainders equal up to float error tie on the index
    frac = np.round(quota - base, 12)
    order = sorted(range(w.size), key=lambda i: (-frac[i], i))
    base[order[:rest]] += 1
    return base


def _sector_index(name_or_idx) -> int:
    if isinstance(name_or_idx, (int, np.integer)):
        return int(name_or_idx)
    return GICS_SECTORS.index(name_or_idx)


def select_portfolio(signal, sectors, sector_weights: Mapping | None = None, n: int = 50,
                     excluded: Sequence = DEFAULT_EXCLUDED, regions: Sequence | None = None,
                     region_weights: Mapping[str, float] | None = None) -> list[int]:
    """Indices of the selected companies.

    Slots per sector follow largest-remainder rounding of ``n`` times the
    sector weights (excluded sectors dropped, the rest renormalized). Each
    sector takes its best-ranked companies; ties in the signal are broken in
    favour of regions below their target share, then by index. Slots a sector
    cannot fill go to the best remaining eligible companies.
    """
    signal = np.asarray(signal, dtype=float)
    sectors = np.asarray(sectors, dtype=int)
    excl = {_sector_index(s) for s in excluded}
    eligible = np.flatnonzero(np.isfinite(signal) & ~np.isin(sectors, list(excl)))
    if eligible.size < n:
        raise UniverseTooSmall(f"{eligible.size} eligible companies for {n} positions")
    if sector_weights is None:
        present = sorted(set(sectors[eligible]))
        sector_weights = {s: float(np.sum(sectors[eligible] == s)) for s in present}
    sw = {_sector_index(k): float(v) for k, v in sector_weights.items()
          if _sector_index(k) not in excl and v > 0}
    keys = sorted(sw)
    slots = dict(zip(keys, largest_remainder(n, [sw[k] for k in keys])))

    def region_rank(i):
        if regions is None or region_weights is None:
            return 0.0
        return -float(region_weights.get(regions[i], 0.0))

    def rank_key(i):
        return (-signal[i], region_rank(i), i)

    chosen: list[int] = []
    for s in keys:
        members = sorted((i for i in eligible if sectors[i] == s), key=rank_key)
        chosen.extend(members[:slots[s]])
    if len(chosen) < n:
        taken = set(chosen)
        rest = sorted((i for i in eligible if i not in taken), key=rank_key)
        chosen.extend(rest[:n - len(chosen)])
    return sorted(int(i) for i in chosen)


# --------------------------------------------------------------- forecasts


def clairvoyant_forecasts(d: Dataset, feature: str, lead: int = LEAD) -> np.ndarray:
    """``(N, T)`` array whose entry at date ``t`` is the true value at ``t + lead``."""
    x = d.tensor()[:, :, d.feature_index(feature)]
    out = np.full_like(x, np.nan)
    out[:, :-lead] = x[:, lead:]
    return out


def forecasts_from_store(rs, d: Dataset, model: str, feature: str,
                         horizon: int = LEAD) -> np.ndarray:
    """Original-unit ``horizon``-step forecasts arranged by forecast date.

    A fold with training length ``L`` forecasts from date ``L - 1``.
    """
    out = np.full((len(d), d.n_quarters), np.nan)
    index = {cid: i for i, cid in enumerate(d.companies)}
    for (m, f, h, fold, cid), v in rs.original.items():
        if m == model and f == feature and h == horizon and cid in index:
            out[index[cid], fold - 1] = v
    return out


# --------------------------------------------------------------- simulation


def simulate(strategy: StrategySpec, market: MarketData, forecasts: np.ndarray | None = None,
             start: int = 0, end: int | None = None,
             initial: float = 1.0) -> tuple[PortfolioState, PerfStats | None]:
    """Run the strategy from quarter index ``start`` to ``end`` (inclusive).

    ``forecasts`` is ``(N, T)``: at date ``t`` the forecast of the signal
    fundamental one year ahead. It is ignored for the random source.
    """
    N, T = market.price.shape
    end = T - 1 if end is None else end
    rng = np.random.default_rng(strategy.seed)
    st = PortfolioState(cash=initial)
    price = market.price
    for t in range(start, end + 1):
        # mark to market; liquidate positions without a price
        if t > start:
            for i in list(st.holdings):
                p = price[i, t]
                if not np.isfinite(p):
                    last = _last_price(price[i], t)
                    st.cash += st.holdings.pop(i) * last
                    st.trades.append((t, market.company_ids[i], "liquidate", 0.0, last))
                    st.flags.append((t, market.company_ids[i]))
                    warnings.warn(f"{market.company_ids[i]}: no price at quarter {t}; "
                                  "position liquidated at last price", MissingPrice,
                                  stacklevel=2)
        value = st.cash + sum(sh * price[i, t] for i, sh in st.holdings.items())
        st.values.append(value)
        if (t - start) % strategy.step == 0 and t < end:
            _rebalance(st, strategy, market, forecasts, t, value, rng)
    stats = perf_stats(np.array(st.values), market.reference[start:end + 1], strict=False) \
        if end - start >= 8 else None
    return st, stats


def _last_price(row, t):
    ok = np.flatnonzero(np.isfinite(row[:t]))
    return float(row[ok[-1]]) if ok.size else 0.0


def _signal(strategy, market, forecasts, t, rng):
    if strategy.source == "random":
        s = rng.random(market.price.shape[0])
    else:
        if forecasts is None:
            raise ValueError(f"source {strategy.source!r} needs forecasts")
        s = forecasts[:, t] / market.ev[:, t]
    bad = ~(market.ev[:, t] > 0) | ~np.isfinite(market.price[:, t])
    return np.where(bad, np.nan, s)


def _rebalance(st, strategy, market, forecasts, t, value, rng):
    s = _signal(strategy, market, forecasts, t, rng)
    chosen = select_portfolio(s, market.sectors, strategy.sector_weights, strategy.n_stocks,
                              strategy.excluded_sectors, market.regions)
    w = 1.0 / len(chosen)
    new = {i: value * w / market.price[i, t] for i in chosen}
    ids = market.company_ids
    for i in sorted(set(st.holdings) | set(new)):
        old_sh, new_sh = st.holdings.get(i, 0.0), new.get(i, 0.0)
        if not math.isclose(old_sh, new_sh, rel_tol=1e-12, abs_tol=1e-15):
            action = "buy" if new_sh > old_sh else "sell"
            st.trades.append((t, ids[i], action, new_sh - old_sh, float(market.price[i, t])))
    st.holdings = new
    st.cash = 0.0
    st.rebalance_weights.append((t, {ids[i]: w for i in chosen}))


# -------------------------------------------------------------- statistics


def perf_stats(values, reference, strict: bool = True, periods_per_year: int = 4) -> PerfStats:
    """Final value, CAGR, annualized volatility and Beta of a quarterly trajectory.

    ``reference`` is the reference index level on the same quarters. With
    ``strict=False`` a zero-variance reference yields ``beta = nan`` instead of
    raising :class:`DegenerateReference`.
    """
    v = np.asarray(values, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if v.size < 9:
        raise ValueError("need at least 8 quarterly returns")
    if ref.shape != v.shape:
        raise ValueError("reference must cover the same quarters as the trajectory")
    years = (v.size - 1) / periods_per_year
    growth = v[-1] / v[0]
    cagr = growth ** (1.0 / years) - 1.0
    logret = np.diff(np.log(v))
    vol = float(np.std(logret, ddof=1) * math.sqrt(periods_per_year))
    rp = v[1:] / v[:-1] - 1.0
    rr = ref[1:] / ref[:-1] - 1.0
    var_r = float(np.var(rr, ddof=1))
    if var_r <= 0:
        if strict:
            raise DegenerateReference("reference returns have zero variance")
        beta = float("nan")
    else:
        beta = float(np.cov(rp, rr, ddof=1)[0, 1] / var_r)
    return PerfStats(float(100.0 * growth), float(100.0 * cagr), float(100.0 * vol), beta)


# ----------------------------------------------------------------------- IO


def write_market_csv(m: MarketData, path, reference_path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["company_id", "year", "quarter", "price_index", "enterprise_value"])
        for i, cid in enumerate(m.company_ids):
            for t in range(m.n_quarters):
                q = m.start.shift(t)
                p, e = m.price[i, t], m.ev[i, t]
                w.writerow([cid, q.year, q.quarter, "" if np.isnan(p) else repr(float(p)),
                            "" if np.isnan(e) else repr(float(e))])
    with open(reference_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "quarter", "reference"])
        for t in range(m.n_quarters):
            q = m.start.shift(t)
            w.writerow([q.year, q.quarter, repr(float(m.reference[t]))])


def load_market_csv(path, d: Dataset, reference_path) -> MarketData:
    """Read market data onto the calendar and company order of ``d``."""
    N, T = len(d), d.n_quarters
    price, ev = np.full((N, T), np.nan), np.full((N, T), np.nan)
    index = {cid: i for i, cid in enumerate(d.companies)}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            i = index.get(row["company_id"])
            if i is None:
                continue
            t = QuarterId(int(row["year"]), int(row["quarter"])) - d.start
            if 0 <= t < T:
                price[i, t] = float(row["price_index"]) if row["price_index"] else np.nan
                ev[i, t] = float(row["enterprise_value"]) if row["enterprise_value"] else np.nan
    ref = np.full(T, np.nan)
    with open(reference_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            t = QuarterId(int(row["year"]), int(row["quarter"])) - d.start
            if 0 <= t < T:
                ref[t] = float(row["reference"])
    return MarketData(tuple(d.companies), d.start, price, ev, d.sectors(),
                      tuple(p.statics.region for p in d.panels), ref)


def load_forecasts_csv(path, d: Dataset) -> np.ndarray:
    """External forecasts with columns company_id, year, quarter, forecast.

    The row dated ``(year, quarter)`` holds the forecast, made at that date, of
    the signal fundamental one year ahead.
    """
    out = np.full((len(d), d.n_quarters), np.nan)
    index = {cid: i for i, cid in enumerate(d.companies)}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            i = index.get(row["company_id"])
            t = QuarterId(int(row["year"]), int(row["quarter"])) - d.start
            if i is not None and 0 <= t < d.n_quarters and row["forecast"]:
                out[i, t] = float(row["forecast"])
    return out


def write_results(out_dir, name: str, st: PortfolioState, stats: PerfStats | None,
                  market: MarketData, start: int = 0) -> list[Path]:
    """Trade log CSV, quarterly trajectory CSV and PerfStats JSON for one strategy."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    safe = re.sub(r"[^A-Za-z0-9.+-]+", "_", name).strip("_")
    paths = [out / f"trades_{safe}.csv", out / f"trajectory_{safe}.csv",
             out / f"perf_{safe}.json"]
    with open(paths[0], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quarter", "company_id", "action", "shares", "price"])
        for t, cid, action, sh, p in st.trades:
            w.writerow([str(market.start.shift(t)), cid, action, repr(float(sh)), repr(float(p))])
    with open(paths[1], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quarter", "value", "reference"])
        for k, v in enumerate(st.values):
            t = start + k
            w.writerow([str(market.start.shift(t)), repr(float(v)),
                        repr(float(market.reference[t] / market.reference[start]))])
    payload = {"strategy": name, **(stats.as_dict() if stats else {})}
    paths[2].write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths
