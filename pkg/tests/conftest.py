import numpy as np
import pytest

from cfbench.panel import DEFAULT_FEATURES, dataset_from_arrays


def random_panel_values(rng, n=6, T=24, positive=True):
    """Raw panel values with strictly positive revenues and assets."""
    D = len(DEFAULT_FEATURES)
    x = rng.normal(0.0, 1.0, size=(n, T, D))
    names = [f.name for f in DEFAULT_FEATURES]
    for name in ("total_revenues", "total_assets"):
        j = names.index(name)
        x[:, :, j] = np.exp(rng.normal(3.0, 0.5, size=(n, T))) if positive else x[:, :, j]
    return x


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_dataset(rng):
    return dataset_from_arrays(random_panel_values(rng))


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    rows = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if rep.when == "call" and "criterion" in props:
                rows.append((props["criterion"], outcome, props.get("title", ""),
                             rep.duration))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num, outcome, title, secs in sorted(rows):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d}: {status}  {title}  ({secs:.1f} s)")
