import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfbench.errors import DegenerateTarget
from cfbench.metrics import point_metrics

from .oracles import brute_point_metrics

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_perfect_forecast():
    m = point_metrics([1, 2], [1, 2])
    for k in ("mae", "mse", "rmse", "mape", "smape", "rse"):
        assert getattr(m, k) == 0
    assert m.r2 == 1


def test_zero_target_boundary():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateTarget)
        m = point_metrics([0, 0], [1, 1])
    assert m.mae == 1 and m.mse == 1 and m.smape == 2


def test_degenerate_target_warns():
    with pytest.warns(DegenerateTarget):
        m = point_metrics([3, 3], [1, 2])
    assert math.isnan(m.r2) and m.mae == 1.5


def test_hand_example():
    m = point_metrics([1, 2, 3], [2, 2, 2])
    assert m.mae == pytest.approx(2 / 3, abs=1e-15)
    assert m.mse == pytest.approx(2 / 3, abs=1e-15)
    assert m.rse == 1 and m.r2 == 0
    assert m.smape == pytest.approx((2 / 3) * (1 / 3 + 0 + 1 / 5), abs=1e-15)
    assert m.smape == pytest.approx(0.35555555555555557, abs=1e-15)


def test_against_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 10))
        y, yh = rng.normal(size=n) * 5, rng.normal(size=n) * 5
        got = point_metrics(y, yh).as_dict()
        ref = brute_point_metrics(list(y), list(yh))
        for k, v in ref.items():
            assert abs(got[k] - v) <= 1e-10 * max(1.0, abs(v)), k


@settings(max_examples=200)
@given(st.lists(st.tuples(finite, finite), min_size=2, max_size=12))
def test_properties(pairs):
    y = np.array([a for a, _ in pairs])
    yh = np.array([b for _, b in pairs])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateTarget)
        m = point_metrics(y, yh)
        r = point_metrics(yh, y)
    assert m.smape == pytest.approx(r.smape, rel=1e-12, abs=1e-12)
    assert 0 <= m.smape <= 2 + 1e-12
    assert m.mae <= m.rmse * (1 + 1e-12) + 1e-12
    assert m.mse == pytest.approx(m.rmse**2, rel=1e-12, abs=1e-12)
    if not math.isnan(m.rse):
        assert m.r2 == pytest.approx(1 - m.rse, abs=1e-12)


@given(st.lists(finite, min_size=2, max_size=12))
def test_predicting_mean(y):
    y = np.array(y)
    if np.var(y) < 1e-6:
        return
    m = point_metrics(y, np.full_like(y, y.mean()))
    assert m.rse == pytest.approx(1.0, abs=1e-9)
    assert m.r2 == pytest.approx(0.0, abs=1e-9)
