import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfbench.errors import MissingDenominator, UnknownCompany, ZeroVariance
from cfbench.panel import DEFAULT_FEATURES, FeatureSpec, QuarterId, dataset_from_arrays
from cfbench.preprocess import (NormalizationState, apply_zscore, clamp_denominator,
                                domain_denormalize, domain_normalize, extract_denominators,
                                fit_zscore, invert, invert_dataset, load_state, purge_outliers,
                                save_state)

from .conftest import random_panel_values

NAMES = [f.name for f in DEFAULT_FEATURES]
REV, ASSETS, OI = NAMES.index("total_revenues"), NAMES.index("total_assets"), \
    NAMES.index("operating_income")


def test_domain_normalize_formula():
    x = np.ones((1, 1, 20))
    x[0, 0, REV], x[0, 0, ASSETS], x[0, 0, OI] = 10.0, 20.0, 2.0
    dn = domain_normalize(dataset_from_arrays(x)).tensor()[0, 0]
    assert dn[OI] == pytest.approx(0.2)
    assert dn[REV] == pytest.approx(0.5)
    assert dn[ASSETS] == pytest.approx(2.0)


def test_domain_normalize_clamp():
    x = np.zeros((1, 1, 20))
    x[0, 0, ASSETS] = 1.0
    dn = domain_normalize(dataset_from_arrays(x)).tensor()[0, 0]
    assert dn[OI] == 0.0
    assert dn[REV] == 0.0
    assert dn[ASSETS] == pytest.approx(1e6)
    assert clamp_denominator(0.0) == 1e-6
    assert clamp_denominator(-1e-9) == -1e-6
    assert clamp_denominator(-3.0) == -3.0


def test_missing_denominator():
    x = np.ones((1, 2, 20))
    x[0, 1, REV] = np.nan
    with pytest.raises(MissingDenominator):
        domain_normalize(dataset_from_arrays(x))


def test_domain_roundtrip_100_panels():
    rng = np.random.default_rng(0)
    for _ in range(100):
        d = dataset_from_arrays(random_panel_values(rng, n=3, T=10))
        back = domain_denormalize(domain_normalize(d), extract_denominators(d)).tensor()
        np.testing.assert_allclose(back, d.tensor(), rtol=1e-9, atol=0)


def _zdata(n, T, seed=0):
    return np.random.default_rng(seed).standard_normal((n, T, 20))


def test_purge_two_extreme_points_removed():
    x = _zdata(600, 30)
    x[5, 3, 2] = x[5, 9, 2] = 200.0
    out, removed = purge_outliers(dataset_from_arrays(x))
    assert removed == ["C00005"]
    assert len(out) == 599


def test_purge_single_extreme_point_kept():
    x = _zdata(600, 30)
    x[7, 4, 1] = 60.0  # about 55 sigma
    out, removed = purge_outliers(dataset_from_arrays(x))
    assert removed == [] and len(out) == 600


def test_purge_per_feature_switch():
    x = _zdata(600, 30)
    x[5, 3, 2] = 200.0
    x[5, 3, 4] = 200.0
    assert purge_outliers(dataset_from_arrays(x))[1] == ["C00005"]
    assert purge_outliers(dataset_from_arrays(x), per_feature=True)[1] == []


@pytest.mark.slow
def test_purge_gaussian_paper_scale_removes_nothing():
    total = 0
    for seed in range(20):
        x = np.random.default_rng(seed).standard_normal((2527, 59, 20))
        total += len(purge_outliers(dataset_from_arrays(x))[1])
    assert total == 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(1.5, 4.0), st.floats(0.0, 3.0))
def test_purge_monotone_in_threshold(seed, lo, extra):
    rng = np.random.default_rng(seed)
    x = rng.standard_t(2.5, size=(30, 8, 20))
    d = dataset_from_arrays(x)
    n_lo = len(purge_outliers(d, lo)[1])
    n_hi = len(purge_outliers(d, lo + extra)[1])
    assert n_hi <= n_lo


def test_zscore_constant_feature():
    x = np.random.default_rng(0).normal(size=(3, 5, 20))
    x[:, :, 0] = 5.0
    with pytest.raises(ZeroVariance):
        fit_zscore(dataset_from_arrays(x), QuarterId(2010, 1))


def test_zscore_two_point():
    x = np.random.default_rng(0).normal(size=(2, 1, 20))
    x[:, 0, 0] = [0.0, 2.0]
    d = dataset_from_arrays(x)
    s = fit_zscore(d, d.start)
    assert s.mean[0] == 1.0 and s.std[0] == 1.0
    np.testing.assert_array_equal(apply_zscore(d, s).tensor()[:, 0, 0], [-1.0, 1.0])


def test_zscore_ignores_later_quarters():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 20, 20))
    d = dataset_from_arrays(x)
    y = x.copy()
    y[:, 16:] += 1000.0
    end = d.start.shift(15)
    assert fit_zscore(d, end) == fit_zscore(dataset_from_arrays(y), end)


def test_zscore_fit_window_moments(small_dataset):
    dn = domain_normalize(small_dataset)
    s = fit_zscore(dn, dn.start.shift(dn.n_quarters - 1))
    z = apply_zscore(dn, s).tensor().reshape(-1, 20)
    assert np.all(np.abs(np.nanmean(z, axis=0)) < 1e-9)
    assert np.all(np.abs(np.nanstd(z, axis=0) - 1) < 1e-9)


def _state(mean, std, kind="one", frozen=None):
    return NormalizationState(("f",), (kind,), np.array([mean]), np.array([std]),
                              QuarterId(2010, 1), frozen or {})


def test_invert_scalar():
    s = _state(1.0, 2.0, frozen={"A": (1.0, 1.0)})
    assert (3.0 - s.mean[0]) / s.std[0] == 1.0
    assert invert(np.array([[1.0]]), s, "A")[0, 0] == 3.0


def test_invert_two_stage():
    s = NormalizationState(("operating_income",), ("rev",), np.array([0.1]), np.array([0.05]),
                           QuarterId(2010, 1), {"A": (10.0, 55.0)})
    assert invert(np.array([[0.0]]), s, "A")[0, 0] == pytest.approx(1.0, abs=1e-15)


def test_invert_unknown_company():
    with pytest.raises(UnknownCompany):
        invert(np.zeros((1, 1)), _state(0.0, 1.0), "missing")


def test_invert_uses_only_fit_window():
    rng = np.random.default_rng(2)
    x = random_panel_values(rng, n=4, T=20)
    a, b = dataset_from_arrays(x), None
    y = x.copy()
    y[:, 12:] *= 3.0
    b = dataset_from_arrays(y)
    end = a.start.shift(11)
    sa = fit_zscore(domain_normalize(a), end, extract_denominators(a))
    sb = fit_zscore(domain_normalize(b), end, extract_denominators(b))
    z = rng.normal(size=(4, 20))
    np.testing.assert_array_equal(invert(z, sa, "C00001"), invert(z, sb, "C00001"))


def test_full_pipeline_roundtrip_50_panels():
    rng = np.random.default_rng(3)
    for _ in range(50):
        d = dataset_from_arrays(random_panel_values(rng, n=4, T=12))
        dens = extract_denominators(d)
        dn = domain_normalize(d)
        s = fit_zscore(dn, dn.start.shift(11), dens)
        back = invert_dataset(apply_zscore(dn, s), s, dens).tensor()
        np.testing.assert_allclose(back, d.tensor(), rtol=1e-9, atol=1e-12)


def test_state_save_load(tmp_path, small_dataset):
    dn = domain_normalize(small_dataset)
    s = fit_zscore(dn, dn.start.shift(10), extract_denominators(small_dataset))
    save_state(s, tmp_path / "s.csv")
    assert load_state(tmp_path / "s.csv") == s


def test_custom_schema_none_denominator():
    feats = list(DEFAULT_FEATURES)
    assert any(f.denominator == "none" for f in feats)
    assert isinstance(feats[0], FeatureSpec)
