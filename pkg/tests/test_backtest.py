import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfbench.backtest import (MarketData, StrategySpec, clairvoyant_forecasts, largest_remainder,
                              load_forecasts_csv, load_market_csv, perf_stats, select_portfolio,
                              simulate, write_market_csv, write_results)
from cfbench.backtest import PortfolioState, _rebalance
from cfbench.errors import DegenerateReference, MissingPrice, UniverseTooSmall
from cfbench.panel import GICS_SECTORS, QuarterId, dataset_from_arrays

from .conftest import random_panel_values
from .oracles import largest_remainder_oracle

FIN = GICS_SECTORS.index("Financials")
RE = GICS_SECTORS.index("Real Estate")
OK_SECTORS = [i for i in range(len(GICS_SECTORS)) if i not in (FIN, RE)]


def _market(price, ev=None, sectors=None, reference=None):
    price = np.asarray(price, dtype=float)
    N, T = price.shape
    ev = np.ones((N, T)) if ev is None else np.asarray(ev, dtype=float)
    sectors = np.array([OK_SECTORS[i % len(OK_SECTORS)] for i in range(N)]) \
        if sectors is None else np.asarray(sectors)
    ref = np.linspace(1.0, 2.0, T) ** 1.3 if reference is None else np.asarray(reference, float)
    return MarketData(tuple(f"C{i:03d}" for i in range(N)), QuarterId(2009, 1), price, ev,
                      sectors, tuple("Europe" for _ in range(N)), ref)


# -------------------------------------------------------------- allocation


@pytest.mark.parametrize("weights,expected", [((0.5, 0.5), (25, 25)),
                                              ((0.5, 0.3, 0.2), (25, 15, 10)),
                                              ((1 / 3, 1 / 3, 1 / 3), (17, 17, 16))])
def test_largest_remainder_examples(weights, expected):
    assert tuple(largest_remainder(50, weights)) == expected


@settings(max_examples=200)
@given(st.integers(1, 60), st.lists(st.integers(0, 9), min_size=1, max_size=6))
def test_largest_remainder_matches_oracle(n, w):
    if sum(w) == 0:
        return
    got = largest_remainder(n, w)
    assert got.sum() == n
    assert list(got) == list(largest_remainder_oracle(n, w))


def test_select_slots_follow_sector_weights():
    rng = np.random.default_rng(0)
    sectors = np.repeat(OK_SECTORS[:3], 40)
    sig = rng.normal(size=120)
    chosen = select_portfolio(sig, sectors, {OK_SECTORS[0]: 0.5, OK_SECTORS[1]: 0.3,
                                             OK_SECTORS[2]: 0.2}, 50)
    counts = [np.sum(sectors[chosen] == s) for s in OK_SECTORS[:3]]
    assert counts == [25, 15, 10]
    # within each sector the top signals are taken
    for s, k in zip(OK_SECTORS[:3], counts):
        members = np.flatnonzero(sectors == s)
        top = members[np.argsort(-sig[members])[:k]]
        assert set(top) <= set(chosen)


def test_select_excludes_sectors_and_missing_signals():
    sectors = np.array([FIN, RE] + [OK_SECTORS[0]] * 4)
    sig = np.array([9.0, 9.0, 1.0, np.nan, 2.0, 3.0])
    assert select_portfolio(sig, sectors, None, 3) == [2, 4, 5]
    with pytest.raises(UniverseTooSmall):
        select_portfolio(sig, sectors, None, 4)


@settings(max_examples=50)
@given(st.integers(0, 10**6), st.floats(1e-3, 1e3))
def test_selection_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    sig = rng.normal(size=80)
    sectors = rng.choice(OK_SECTORS, 80)
    assert select_portfolio(sig, sectors, None, 20) == select_portfolio(c * sig, sectors, None, 20)


def test_region_tiebreak():
    sig = np.ones(4)
    sectors = np.full(4, OK_SECTORS[0])
    regions = ["Asia", "Europe", "Europe", "North America"]
    got = select_portfolio(sig, sectors, None, 2, regions=regions,
                           region_weights={"North America": 0.7, "Europe": 0.2, "Asia": 0.1})
    assert got == [1, 3]


# -------------------------------------------------------------- simulation


def test_flat_prices_conserve_value():
    rng = np.random.default_rng(1)
    m = _market(np.full((60, 20), 3.0))
    fc = rng.normal(size=(60, 20))
    spec = StrategySpec(source="external", rebalance="quarterly", n_stocks=10)
    state, stats = simulate(spec, m, fc, initial=100.0)
    np.testing.assert_allclose(state.values, 100.0, rtol=1e-9)
    assert stats.final_value == pytest.approx(100.0)


def test_single_stock_doubles():
    price = np.array([np.linspace(1.0, 2.0, 13)])
    m = _market(price)
    state, stats = simulate(StrategySpec(source="external", n_stocks=1), m, np.ones((1, 13)))
    assert state.values[-1] == pytest.approx(2.0)
    assert stats.final_value == pytest.approx(200.0)


def test_rebalance_weights_and_positions():
    rng = np.random.default_rng(2)
    price = np.exp(np.cumsum(rng.normal(0, 0.1, size=(80, 17)), axis=1))
    m = _market(price)
    st, _ = simulate(StrategySpec(source="random", rebalance="yearly", n_stocks=50), m)
    assert [t for t, _ in st.rebalance_weights] == [0, 4, 8, 12]
    for t, w in st.rebalance_weights:
        assert len(w) == 50
        assert sum(w.values()) == pytest.approx(1.0, abs=1e-9)


def test_holdings_value_matches_weights():
    rng = np.random.default_rng(3)
    price = np.exp(np.cumsum(rng.normal(0, 0.1, size=(30, 10)), axis=1))
    m = _market(price)
    st = PortfolioState(cash=5.0)
    _rebalance(st, StrategySpec(source="random", n_stocks=10), m, None, 2, 5.0,
               np.random.default_rng(0))
    vals = np.array([sh * price[i, 2] for i, sh in st.holdings.items()])
    np.testing.assert_allclose(vals / vals.sum(), 0.1, atol=1e-12)
    assert vals.sum() == pytest.approx(5.0, rel=1e-12)


def test_rebalance_idempotent():
    rng = np.random.default_rng(4)
    price = np.exp(np.cumsum(rng.normal(0, 0.1, size=(40, 10)), axis=1))
    m = _market(price)
    fc = rng.normal(size=(40, 10))
    spec = StrategySpec(source="external", n_stocks=12)
    st = PortfolioState(cash=1.0)
    _rebalance(st, spec, m, fc, 3, 1.0, None)
    first = dict(st.holdings)
    n_trades = len(st.trades)
    value = sum(sh * price[i, 3] for i, sh in st.holdings.items())
    _rebalance(st, spec, m, fc, 3, value, None)
    assert st.holdings.keys() == first.keys()
    for k in first:
        assert st.holdings[k] == pytest.approx(first[k], rel=1e-12)
    assert len(st.trades) == n_trades


def test_missing_price_liquidates():
    price = np.array([[1.0, 1.0, 2.0, np.nan, np.nan] + [5.0] * 8,
                      [1.0] * 13])
    m = _market(price)
    fc = np.array([[2.0] * 13, [1.0] * 13])
    with pytest.warns(MissingPrice):
        st, _ = simulate(StrategySpec(source="external", n_stocks=1), m, fc)
    assert st.flags == [(3, "C000")]
    assert st.values[2] == pytest.approx(2.0)
    assert st.values[3] == pytest.approx(2.0)  # sold at the last price, held as cash
    assert any(a == "liquidate" for _, _, a, _, _ in st.trades)


def test_nonpositive_ev_not_ranked():
    price = np.ones((3, 13))
    ev = np.ones((3, 13))
    ev[0, 0] = -1.0
    fc = np.array([[100.0] * 13, [2.0] * 13, [1.0] * 13])
    st, _ = simulate(StrategySpec(source="external", n_stocks=1), _market(price, ev), fc, end=3)
    assert st.rebalance_weights[0][1] == {"C001": 1.0}


def test_clairvoyant_beats_random_on_constructed_market():
    from cfbench.synth import GeneratorSpec, generate, generate_market
    d = generate(GeneratorSpec(n_companies=300, T=40), seed=0)
    m = generate_market(d, seed=0)
    fc = clairvoyant_forecasts(d, "operating_income")
    _, good = simulate(StrategySpec(source="clairvoyant"), m, fc, end=35)
    _, rand = simulate(StrategySpec(source="random"), m, None, end=35)
    assert good.cagr > rand.cagr


# -------------------------------------------------------------- statistics


def test_cagr_doubling_over_four_years():
    v = np.linspace(1.0, 2.0, 17)
    s = perf_stats(v, np.linspace(1.0, 1.5, 17) ** 2)
    assert s.cagr == pytest.approx(100 * (2 ** 0.25 - 1))
    assert s.cagr == pytest.approx(18.92, abs=0.005)
    assert s.final_value == pytest.approx(200.0)


def test_beta_of_reference_is_one():
    rng = np.random.default_rng(5)
    ref = np.exp(np.cumsum(rng.normal(0.01, 0.05, 21)))
    s = perf_stats(3.0 * ref, ref)
    r = perf_stats(ref, ref)
    assert s.beta == pytest.approx(1.0)
    assert s.volatility == pytest.approx(r.volatility)


def test_constant_trajectory_stats():
    s = perf_stats(np.ones(12), np.linspace(1, 2, 12))
    assert s.cagr == 0.0 and s.volatility == 0.0 and s.beta == 0.0


def test_volatility_definition():
    rng = np.random.default_rng(6)
    v = np.exp(np.cumsum(rng.normal(0, 0.1, 13)))
    s = perf_stats(v, np.linspace(1, 2, 13))
    assert s.volatility == pytest.approx(100 * 2 * np.std(np.diff(np.log(v)), ddof=1))


def test_degenerate_reference():
    with pytest.raises(DegenerateReference):
        perf_stats(np.linspace(1, 2, 10), np.ones(10))
    assert np.isnan(perf_stats(np.linspace(1, 2, 10), np.ones(10), strict=False).beta)
    with pytest.raises(ValueError):
        perf_stats(np.ones(8), np.ones(8))


# ---------------------------------------------------------------------- IO


def test_market_and_forecast_csv_roundtrip(tmp_path):
    d = dataset_from_arrays(random_panel_values(np.random.default_rng(7), n=3, T=10))
    rng = np.random.default_rng(8)
    price = rng.uniform(1, 2, (3, 10))
    price[1, 4] = np.nan
    m = MarketData(tuple(d.companies), d.start, price, rng.uniform(1, 2, (3, 10)), d.sectors(),
                   tuple(p.statics.region for p in d.panels), rng.uniform(1, 2, 10))
    write_market_csv(m, tmp_path / "m.csv", tmp_path / "r.csv")
    back = load_market_csv(tmp_path / "m.csv", d, tmp_path / "r.csv")
    np.testing.assert_array_equal(back.price, m.price)
    np.testing.assert_array_equal(back.ev, m.ev)
    np.testing.assert_array_equal(back.reference, m.reference)
    (tmp_path / "f.csv").write_text("company_id,year,quarter,forecast\n"
                                    f"{d.companies[2]},2009,3,1.5\nZZZ,2009,1,3\n")
    fc = load_forecasts_csv(tmp_path / "f.csv", d)
    assert fc[2, 2] == 1.5 and np.isfinite(fc).sum() == 1


def test_write_results(tmp_path):
    m = _market(np.full((5, 12), 2.0))
    spec = StrategySpec(source="random", n_stocks=2)
    st, stats = simulate(spec, m)
    paths = write_results(tmp_path, spec.name, st, stats, m)
    assert [p.name for p in paths] == ["trades_random_operating_income_over_ev_yearly.csv",
                                       "trajectory_random_operating_income_over_ev_yearly.csv",
                                       "perf_random_operating_income_over_ev_yearly.json"]
    payload = json.loads(paths[2].read_text())
    assert payload["final_value"] == pytest.approx(100.0)
    assert len(paths[1].read_text().splitlines()) == 13
