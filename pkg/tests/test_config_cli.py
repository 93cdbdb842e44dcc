import json

import numpy as np
import pandas as pd
import pytest
import yaml

from cfbench.backtest import MarketData, write_market_csv
from cfbench.cli import _overrides, main
from cfbench.config import (OUTPUT_ENV, apply_overrides, config_digest, dump_config,
                            load_config, parse_config)
from cfbench.errors import ConfigError
from cfbench.synth import GeneratorSpec, generate

GEN = {"n_companies": 12, "T": 24}


def _write_cfg(tmp_path, raw, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw), encoding="utf-8")
    return p


def _base(tmp_path, **extra):
    raw = {"seed": 0, "output_dir": str(tmp_path / "out"), "data": {"generator": GEN},
           "folds": {"min_train": 18}, "n_samples": 20}
    raw.update(extra)
    return raw


# ------------------------------------------------------------------- config


def test_config_roundtrip(tmp_path):
    raw = _base(tmp_path, models=[{"model": "arma", "p": 1, "q": 1},
                                  {"model": "nlinear", "revin": True, "train": {"epochs": 2}}],
                backtest={"strategies": [{"source": "random"}]})
    cfg = parse_config(raw)
    again = parse_config(yaml.safe_load(dump_config(cfg)))
    assert again == cfg
    assert config_digest(again) == config_digest(cfg)


def test_config_validation():
    with pytest.raises(ConfigError, match="seed"):
        parse_config({"data": {"generator": GEN}})
    with pytest.raises(ConfigError, match="data"):
        parse_config({"seed": 1})
    with pytest.raises(ConfigError, match="unknown"):
        parse_config({"seed": 1, "data": {"generator": GEN}, "bogus": 1})
    with pytest.raises(ConfigError, match="unknown model"):
        parse_config({"seed": 1, "data": {"generator": GEN}, "models": [{"model": "lstm"}]})
    with pytest.raises(ConfigError):
        parse_config({"seed": 1, "data": {"generator": GEN}, "folds": {"B": 0}})
    with pytest.raises(ConfigError):
        parse_config({"seed": 1, "data": {"csv": "a.csv", "generator": GEN}})


def test_dot_path_overrides(tmp_path):
    path = _write_cfg(tmp_path, _base(tmp_path, models=[{"model": "arma", "p": 1, "q": 1}]))
    cfg = load_config(path, {"models.0.p": "4", "folds.B": "8", "models.1.model": "mean"})
    assert cfg.models[0]["p"] == 4 and cfg.folds.B == 8
    assert cfg.models[1] == {"model": "mean"}
    with pytest.raises(ConfigError):
        apply_overrides({"a": [1]}, {"a.5": "1"})
    assert _overrides(["--models.0.p", "4", "--folds.H=2"]) == {"models.0.p": "4",
                                                                   "folds.H": "2"}
    with pytest.raises(ConfigError):
        _overrides(["stray"])


def test_output_dir_from_env(tmp_path, monkeypatch):
    raw = _base(tmp_path)
    raw.pop("output_dir")
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "envout"))
    cfg = parse_config(raw)
    assert str(cfg.resolved_output_dir()) == str(tmp_path / "envout")
    assert config_digest(cfg) == config_digest(parse_config({**raw, "output_dir": "x"}))


# ---------------------------------------------------------------------- CLI


def test_missing_data_path_exit_2(tmp_path, capsys):
    missing = tmp_path / "nowhere.csv"
    path = _write_cfg(tmp_path, {"seed": 0, "data": {"csv": str(missing)}})
    assert main(["profile", str(path)]) == 2
    assert str(missing) in capsys.readouterr().err
    assert main(["profile", str(tmp_path / "no.yaml")]) == 2


def test_profile_generator(tmp_path):
    path = _write_cfg(tmp_path, _base(tmp_path))
    assert main(["profile", str(path)]) == 0
    out = tmp_path / "out"
    for name in ("profile_moments.csv", "profile_series.csv", "profile.json",
                 "manifest_profile.json"):
        assert (out / name).exists()


def test_forecast_two_models_and_determinism(tmp_path):
    raw = _base(tmp_path, models=[{"model": "mean"}, {"model": "armean", "p": 1}])
    path = _write_cfg(tmp_path, raw)
    assert main(["forecast", str(path)]) == 0
    out = tmp_path / "out"
    agg = pd.read_csv(out / "aggregate.csv")
    assert sorted(agg.model) == ["armean(p=1)", "mean"]
    table = pd.read_csv(out / "table.csv")
    assert "±" in table.mae.iloc[0]
    assert sorted(pd.read_csv(out / "aggregate_excluded.csv").model) == ["armean(p=1)", "mean"]
    for view in ("by_feature", "by_fold", "by_horizon"):
        assert (out / f"{view}.csv").exists()
    first = (out / "results.csv").read_bytes()
    manifest = json.loads((out / "manifest_forecast.json").read_text())
    assert main(["forecast", str(path), "--output-dir", str(tmp_path / "out2"), "--jobs", "2"]) == 0
    assert (tmp_path / "out2" / "results.csv").read_bytes() == first
    again = json.loads((tmp_path / "out2" / "manifest_forecast.json").read_text())
    assert again["config_digest"] == manifest["config_digest"]
    assert again["outputs"] == manifest["outputs"]


def test_forecast_revin_pairs(tmp_path):
    tr = {"epochs": 2}
    raw = _base(tmp_path, models=[{"model": "nlinear", "train": tr},
                                  {"model": "nlinear", "revin": True, "train": tr}],
                folds={"min_train": 20, "B": 8})
    assert main(["forecast", str(_write_cfg(tmp_path, raw))]) == 0
    pairs = pd.read_csv(tmp_path / "out" / "revin_improvement.csv")
    assert list(pairs.model) == ["nlinear"] and list(pairs.revin_model) == ["nlinear+revin"]
    assert "crps_improvement_pct" in pairs


def test_forecast_partial_failure_exit_1(tmp_path):
    # a lookback longer than the calendar leaves the global model nothing to forecast
    raw = _base(tmp_path, models=[{"model": "mean"},
                                  {"model": "linreg", "quantiles": False}],
                folds={"min_train": 18, "B": 30})
    assert main(["forecast", str(_write_cfg(tmp_path, raw))]) == 1
    manifest = json.loads((tmp_path / "out" / "manifest_forecast.json").read_text())
    assert list(manifest["failures"]) == ["linreg"]
    assert "incomplete_lookback" in manifest["failures"]["linreg"]
    assert list(pd.read_csv(tmp_path / "out" / "aggregate.csv").model) == ["mean"]


def test_backtest_clairvoyant_row(tmp_path):
    raw = _base(tmp_path, data={"generator": {"n_companies": 120, "T": 24}},
                backtest={"n_stocks": 20, "strategies": [
                    {"source": "clairvoyant"}, {"source": "random", "rebalance": "quarterly"}]})
    assert main(["backtest", str(_write_cfg(tmp_path, raw))]) == 0
    table = pd.read_csv(tmp_path / "out" / "table_backtest.csv")
    row = table[table.source == "clairvoyant"].iloc[0]
    for col in ("final_value", "cagr", "volatility", "beta"):
        assert np.isfinite(row[col])
    assert "reference" in set(table.strategy)


def test_backtest_flat_market(tmp_path):
    d = generate(GeneratorSpec(n_companies=60, T=24), seed=0)
    N, T = len(d), d.n_quarters
    m = MarketData(tuple(d.companies), d.start, np.full((N, T), 10.0), np.ones((N, T)),
                   d.sectors(), tuple(p.statics.region for p in d.panels), np.ones(T))
    write_market_csv(m, tmp_path / "market.csv", tmp_path / "reference.csv")
    raw = _base(tmp_path, data={"generator": {"n_companies": 60, "T": 24},
                                "market_csv": str(tmp_path / "market.csv"),
                                "reference_csv": str(tmp_path / "reference.csv")},
                backtest={"n_stocks": 10, "strategies": [{"source": "clairvoyant"}]})
    assert main(["backtest", str(_write_cfg(tmp_path, raw))]) == 0
    table = pd.read_csv(tmp_path / "out" / "table_backtest.csv")
    for _, row in table.iterrows():
        assert row.cagr == pytest.approx(0.0, abs=1e-9)
        assert row.volatility == pytest.approx(0.0, abs=1e-9)
        assert row.final_value == pytest.approx(100.0, rel=1e-9)


def test_model_source_pipeline(tmp_path):
    gen = {"n_companies": 80, "T": 30}
    fraw = _base(tmp_path, data={"generator": gen}, models=[{"model": "armean", "p": 1}],
                 folds={"min_train": 16})
    assert main(["forecast", str(_write_cfg(tmp_path, fraw, "f.yaml"))]) == 0
    braw = _base(tmp_path, data={"generator": gen},
                 output_dir=str(tmp_path / "bt"),
                 backtest={"n_stocks": 10, "results": str(tmp_path / "out" / "results.csv"),
                           "strategies": [{"source": "model", "model": "armean(p=1)"}]})
    assert main(["backtest", str(_write_cfg(tmp_path, braw, "b.yaml"))]) == 0
    table = pd.read_csv(tmp_path / "bt" / "table_backtest.csv")
    assert table.strategy.iloc[0] == "armean(p=1)/operating_income_over_ev/yearly"
    assert json.loads((tmp_path / "bt" / "manifest_backtest.json").read_text())["window"]


def test_synth_then_csv_forecast(tmp_path):
    raw = _base(tmp_path, output_dir=str(tmp_path / "syn"))
    assert main(["synth", str(_write_cfg(tmp_path, raw, "s.yaml"))]) == 0
    syn = tmp_path / "syn"
    assert {p.name for p in syn.iterdir()} >= {"panel.csv", "schema.yaml", "market.csv",
                                               "reference.csv", "generator.json"}
    raw2 = _base(tmp_path, data={"csv": str(syn / "panel.csv"), "schema": str(syn / "schema.yaml")},
                 models=[{"model": "mean"}])
    assert main(["forecast", str(_write_cfg(tmp_path, raw2, "f.yaml"))]) == 0


def test_dump_config(tmp_path, capsys):
    path = _write_cfg(tmp_path, _base(tmp_path))
    assert main(["forecast", str(path), "--seed", "9", "--dump-config"]) == 0
    assert yaml.safe_load(capsys.readouterr().out)["seed"] == 9
