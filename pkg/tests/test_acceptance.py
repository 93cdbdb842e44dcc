"""Acceptance suite: one test per criterion, each timed against its budget."""

import time
import warnings

import numpy as np
import pytest
import yaml
from scipy.signal import lfilter

from cfbench.backtest import (StrategySpec, clairvoyant_forecasts, largest_remainder, perf_stats,
                              simulate)
from cfbench.cli import main
from cfbench.globalmodels import DLinearModel, NLinearModel, TrainConfig
from cfbench.globalmodels.linear_nets import revin_denormalize, revin_normalize
from cfbench.harness import ModelSpec, fit_fold, make_folds
from cfbench.local import auto_arima, fit_arma
from cfbench.metrics import point_metrics
from cfbench.panel import dataset_from_arrays
from cfbench.preprocess import (apply_zscore, domain_normalize, extract_denominators, fit_zscore,
                                invert_dataset)
from cfbench.prob import QUANTILE_LEVELS, crps, crps_fast, crps_gaussian
from cfbench.synth import GeneratorSpec, ProcessSpec, generate, generate_market, simulate_process

from .conftest import random_panel_values
from .oracles import brute_crps, brute_point_metrics, largest_remainder_oracle
from .test_backtest import _market


@pytest.fixture
def criterion(record_property):
    def tag(num, title):
        record_property("criterion", num)
        record_property("title", title)
        return time.perf_counter()
    return tag


def _budget(t0, seconds):
    elapsed = time.perf_counter() - t0
    assert elapsed < seconds, f"took {elapsed:.1f} s, budget {seconds} s"


def _arma(phi, psi, n, rng, burn=200):
    e = rng.standard_normal(n + burn)
    return lfilter([1.0, psi], [1.0, -phi], e)[burn:]


def test_c01_metric_oracles(criterion):
    t0 = criterion(1, "point metrics match brute force; worked examples exact")
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 12))
        y, yh = rng.normal(size=n) * 3, rng.normal(size=n) * 3
        got = point_metrics(y, yh).as_dict()
        for k, v in brute_point_metrics(list(y), list(yh)).items():
            assert abs(got[k] - v) <= 1e-10 * max(1.0, abs(v)), k
    m = point_metrics([1, 2, 3], [2, 2, 2])
    assert (m.mae, m.mse, m.rse, m.r2) == (2 / 3, 2 / 3, 1.0, 0.0)
    perfect = point_metrics([1, 2], [1, 2])
    assert perfect.mae == perfect.smape == 0 and perfect.r2 == 1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        zero = point_metrics([0, 0], [1, 1])
    assert zero.mae == 1 and zero.smape == 2
    _budget(t0, 1)


def test_c02_crps(criterion):
    t0 = criterion(2, "CRPS: brute force, point forecast = MAE, Gaussian closed form")
    rng = np.random.default_rng(1)
    for _ in range(1000):
        s = rng.normal(size=int(rng.integers(1, 60))) * rng.uniform(0.1, 5)
        y = rng.normal() * 2
        assert abs(crps_fast(s, y) - brute_crps(list(s), y)) <= 1e-10
    y, yh = rng.normal(size=500), rng.normal(size=500)
    per = np.array([crps_fast([b], a) for a, b in zip(y, yh)])
    assert np.array_equal(per, np.abs(y - yh))
    assert per.mean() == point_metrics(y, yh).mae
    assert all(crps([b], a) == abs(a - b) for a, b in zip(y[:20], yh[:20]))
    for mu, sigma, obs in [(0.0, 1.0, 0.3), (1.0, 2.0, -2.0)]:
        exact = float(crps_gaussian(mu, sigma, obs))
        assert abs(crps_fast(rng.normal(mu, sigma, 100_000), obs) - exact) / exact < 0.02
    _budget(t0, 10)


def test_c03_arma_recovery(criterion):
    t0 = criterion(3, "ARMA(1,1) recovery on n=5000, >= 18/20 seeds")
    ok = 0
    for s in range(20):
        m = fit_arma(_arma(0.6, 0.3, 5000, np.random.default_rng(s)), 1, 1, seed=s)
        ok += abs(m.phi[0] - 0.6) <= 0.05 and abs(m.psi[0] - 0.3) <= 0.07
    print(f"ARMA recovery: {ok}/20")
    assert ok >= 18
    _budget(t0, 30)


def test_c04_auto_arima(criterion):
    t0 = criterion(4, "AutoARIMA: d=1 on ARIMA(1,1,1) >= 90%, (0,0,0) on noise >= 80%")
    d1 = wn = 0
    for s in range(50):
        rng = np.random.default_rng(100 + s)
        r = auto_arima(np.cumsum(_arma(0.6, 0.3, 300, rng)), seed=s)
        d1 += r.order is not None and r.order[1] == 1
        wn += auto_arima(rng.standard_normal(200), seed=s).order == (0, 0, 0)
    print(f"AutoARIMA: d=1 in {d1}/50, (0,0,0) in {wn}/50")
    assert d1 >= 45 and wn >= 40
    _budget(t0, 120)


def test_c05_protocol_shape(criterion):
    t0 = criterion(5, "40 folds on 59 quarters; holdout never in a training batch")
    assert len(make_folds(59, 12, 4)) == 40
    rng = np.random.default_rng(2)
    ten = rng.normal(size=(200, 59, 3))
    ids = np.array([f"C{i:04d}" for i in range(200)])
    m = DLinearModel([0, 1, 2], cfg=TrainConfig(epochs=3))
    m.fit(ten, np.zeros(200, int), ids, 58, log_batches=True)
    assert m.holdout_
    for batch in m.history_.batch_companies:
        assert not (batch & m.holdout_)
    _budget(t0, 60)


def test_c06_leakage(criterion):
    t0 = criterion(6, "post-train_end perturbation leaves fold artifacts unchanged")
    d = generate(GeneratorSpec(n_companies=30, T=59), seed=3)
    dn = domain_normalize(d)
    dens = extract_denominators(d)
    rng = np.random.default_rng(4)
    folds = [make_folds(59)[i] for i in sorted(rng.choice(40, 5, replace=False))]
    specs = [ModelSpec("autotheta"), ModelSpec("linreg", quantiles=False),
             ModelSpec("nlinear", train={"epochs": 10})]
    for fold in folds:
        v = dn.tensor()
        v[:, fold.train_len:, :] += rng.normal(0, 5, size=v[:, fold.train_len:, :].shape)
        pert = dataset_from_arrays(v, dn.features, dn.start, dn.companies,
                                   [p.statics for p in dn.panels])
        for spec in specs:
            a = fit_fold(dn, spec, fold, 0, dens).artifacts()
            b = fit_fold(pert, spec, fold, 0, dens).artifacts()
            _same(a, b)
    _budget(t0, 60)


def _same(x, y):
    if isinstance(x, dict):
        assert x.keys() == y.keys()
        for k in x:
            _same(x[k], y[k])
    elif isinstance(x, np.ndarray):
        np.testing.assert_array_equal(x, y)
    else:
        assert x == y


def test_c07_quantile_calibration(criterion):
    t0 = criterion(7, "NLinear [0.1, 0.9] coverage 0.80 +- 0.05 out of sample")
    rng = np.random.default_rng(5)
    N, T, C, end = 1000, 59, 2, 42
    proc = ProcessSpec("ar1", phi=0.7, scale=np.sqrt(1 - 0.49), df=None)
    x = np.stack([np.stack([simulate_process(proc, T, rng) for _ in range(C)], axis=1)
                  for _ in range(N)])
    m = NLinearModel([0, 1]).fit(x, np.zeros(N, int), [f"C{i}" for i in range(N)], end)
    lo, hi = list(QUANTILE_LEVELS).index(0.1), list(QUANTILE_LEVELS).index(0.9)
    hits = []
    for o in range(end, T - 4):  # every target lies after the training data
        q = m.predict(x[:, o - 11:o + 1, :], np.zeros(N, int))
        y = x[:, o + 1:o + 5, :].transpose(0, 2, 1)
        hits.append((y >= q[..., lo]) & (y <= q[..., hi]))
    coverage = float(np.mean(hits))
    print(f"coverage: {coverage:.4f}")
    assert abs(coverage - 0.80) <= 0.05
    _budget(t0, 300)


def test_c08_revin(criterion):
    t0 = criterion(8, "RevIN inverse pair and affine equivariance")
    rng = np.random.default_rng(6)
    x = rng.normal(2, 3, size=(50, 4, 12))
    z, stats = revin_normalize(x)
    np.testing.assert_allclose(revin_denormalize(z, stats), x, rtol=0, atol=1e-6)
    ten = np.cumsum(rng.normal(size=(100, 40, 2)), axis=1)
    m = NLinearModel([0, 1], quantiles=False, revin=True, learn_affine=False,
                     cfg=TrainConfig(epochs=5))
    m.fit(ten, np.zeros(100, int), [f"C{i}" for i in range(100)], 39)
    np.testing.assert_array_equal(m.net_.params["gamma"], 1.0)
    np.testing.assert_array_equal(m.net_.params["beta"], 0.0)
    win = ten[:, -12:, :]
    base = m.predict(win, np.zeros(100, int))
    for a, b in [(2.0, 0.0), (0.5, 3.0), (3.0, -7.0)]:
        got = m.predict(a * win + b, np.zeros(100, int))
        np.testing.assert_allclose(got, a * base + b, rtol=1e-5, atol=1e-5)
    _budget(t0, 60)


def test_c09_preprocess_roundtrip(criterion):
    t0 = criterion(9, "pipeline inversion to 1e-9; fit-window moments exact")
    rng = np.random.default_rng(7)
    for _ in range(100):
        d = dataset_from_arrays(random_panel_values(rng, n=4, T=16))
        dens = extract_denominators(d)
        dn = domain_normalize(d)
        s = fit_zscore(dn, dn.start.shift(11), dens)
        dz = apply_zscore(dn, s)
        np.testing.assert_allclose(invert_dataset(dz, s, dens).tensor(), d.tensor(),
                                   rtol=1e-9, atol=0)
        fit = dz.tensor()[:, :12, :].reshape(-1, 20)
        assert np.abs(fit.mean(axis=0)).max() < 1e-9
        assert np.abs(fit.std(axis=0) - 1.0).max() < 1e-9
    _budget(t0, 60)


def test_c10_backtest_accounting(criterion):
    t0 = criterion(10, "conservation, weights, Beta = 1, CAGR closed form")
    rng = np.random.default_rng(8)
    m = _market(np.full((80, 20), 4.0))
    st, _ = simulate(StrategySpec(source="external", rebalance="quarterly"), m,
                     rng.normal(size=(80, 20)), initial=10.0)
    np.testing.assert_allclose(st.values, 10.0, rtol=1e-9, atol=0)
    price = np.exp(np.cumsum(rng.normal(0.01, 0.1, size=(80, 20)), axis=1))
    st, _ = simulate(StrategySpec(source="random", rebalance="quarterly"), _market(price))
    for _, w in st.rebalance_weights:
        assert abs(sum(w.values()) - 1.0) <= 1e-9
    ref = np.exp(np.cumsum(rng.normal(0.02, 0.05, 21)))
    assert perf_stats(ref, ref).beta == pytest.approx(1.0, abs=1e-12)
    cagr = perf_stats(np.linspace(1, 2, 17), ref[:17]).cagr
    assert abs(cagr - 18.92) <= 0.01
    _budget(t0, 30)


def test_c11_clairvoyant_dominance(criterion):
    t0 = criterion(11, "clairvoyant beats random in >= 95% of 40 seeds")
    wins = 0
    for seed in range(40):
        d = generate(GeneratorSpec(n_companies=300, T=40), seed)
        m = generate_market(d, seed)
        fc = clairvoyant_forecasts(d, "operating_income")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, good = simulate(StrategySpec(source="clairvoyant"), m, fc, end=35)
            _, rand = simulate(StrategySpec(source="random", seed=seed), m, None, end=35)
        wins += good.cagr > rand.cagr
    print(f"clairvoyant wins: {wins}/40")
    assert wins >= 38
    _budget(t0, 120)


def test_c12_sector_matching(criterion):
    t0 = criterion(12, "slot allocation equals brute-force largest remainder")
    rng = np.random.default_rng(9)
    for _ in range(100):
        k = int(rng.integers(2, 9))
        w = rng.dirichlet(np.ones(k))
        n = int(rng.integers(k, 80))
        assert list(largest_remainder(n, w)) == list(largest_remainder_oracle(n, list(w)))
    assert list(largest_remainder(50, [1 / 3] * 3)) == [17, 17, 16]
    _budget(t0, 30)


def test_c13_forecast_determinism(criterion, tmp_path):
    t0 = criterion(13, "two cmd_forecast runs give byte-identical results")
    raw = {"seed": 11, "data": {"generator": {"n_companies": 15, "T": 30}},
           "folds": {"min_train": 24}, "n_samples": 30,
           "models": [{"model": "arma", "p": 1, "q": 1}, {"model": "trend"},
                      {"model": "dlinear", "revin": True, "train": {"epochs": 3}}]}
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump(raw))
    outs = []
    for run in ("a", "b"):
        assert main(["forecast", str(cfg), "--output-dir", str(tmp_path / run)]) == 0
        outs.append(sorted((tmp_path / run).glob("*.csv")))
    assert [p.name for p in outs[0]] == [p.name for p in outs[1]]
    for a, b in zip(*outs):
        assert a.read_bytes() == b.read_bytes(), a.name
    _budget(t0, 120)
