"""Command-line entry point: ``cfbench profile | forecast | backtest | synth``.

Exit codes: 0 success, 1 some models or strategies failed (the run still
completes), 2 configuration or data errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import __version__
from .backtest import (MarketData, StrategySpec, clairvoyant_forecasts, forecasts_from_store,
                       load_forecasts_csv, load_market_csv, perf_stats, simulate,
                       write_market_csv, write_results)
from .config import ExperimentConfig, config_digest, dump_config, load_config
from .errors import (CalendarTooShort, CFBenchError, ConfigError, DuplicateQuarter,
                     EmptyReport, MalformedRow, MissingDenominator, UnknownFeatureColumn,
                     ZeroVariance)
from .harness import ResultStore, aggregate, cohort_filter, make_folds, run_experiment
from .panel import Dataset, load_csv, load_schema, write_csv, write_schema
from .preprocess import domain_normalize, extract_denominators, purge_outliers
from .synth import GeneratorSpec, generate, generate_market, profile

__all__ = ["main", "build_parser", "cmd_profile", "cmd_forecast", "cmd_backtest", "cmd_synth"]

log = logging.getLogger("cfbench")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2
DATA_ERRORS = (ConfigError, MalformedRow, DuplicateQuarter, UnknownFeatureColumn,
               MissingDenominator, CalendarTooShort, ZeroVariance, FileNotFoundError)
VIEWS = {"by_feature": ("model", "feature"), "by_fold": ("model", "fold"),
         "by_horizon": ("model", "horizon")}


# ------------------------------------------------------------------ helpers


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    """Raw dataset from the configured CSV or generator."""
    if cfg.data.csv is not None:
        path = Path(cfg.data.csv)
        if not path.is_file():
            raise ConfigError(f"data file not found: {path}")
        schema = None
        if cfg.data.schema is not None:
            sp = Path(cfg.data.schema)
            if not sp.is_file():
                raise ConfigError(f"schema file not found: {sp}")
            schema = load_schema(sp)
        return load_csv(path, schema)
    return generate(GeneratorSpec.from_dict(cfg.data.generator), cfg.seed)


def prepare(d: Dataset, cfg: ExperimentConfig) -> tuple[Dataset, dict | None, list[str]]:
    """Domain normalization and outlier purge as configured.

    Returns the prepared dataset, the raw denominators (for original-unit
    inversion) and the purged company ids.
    """
    dens, dropped = None, []
    if cfg.preprocess.domain_normalize:
        dens = extract_denominators(d)
        d = domain_normalize(d)
    if cfg.preprocess.purge_outliers:
        d, dropped = purge_outliers(d, cfg.preprocess.z_threshold)
    return d, dens, list(dropped)


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def input_digest(cfg: ExperimentConfig) -> str:
    """Content digest of the data inputs (files, or the generator spec)."""
    h = hashlib.sha256()
    if cfg.data.csv is not None:
        h.update(Path(cfg.data.csv).read_bytes())
    else:
        h.update(json.dumps(cfg.data.generator, sort_keys=True).encode())
    for p in (cfg.data.schema, cfg.data.market_csv, cfg.data.reference_csv,
              cfg.data.forecasts_csv):
        if p is not None and Path(p).is_file():
            h.update(Path(p).read_bytes())
    return h.hexdigest()


def write_manifest(out: Path, command: str, cfg: ExperimentConfig, files: Sequence[Path],
                   extra: dict | None = None) -> Path:
    """Manifest with config digest, seed and output digests; no timestamps."""
    manifest = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "config_digest": config_digest(cfg),
        "input_digest": input_digest(cfg),
        "outputs": {p.name: _digest(p) for p in sorted(files)},
        **(extra or {}),
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_frame(df: pd.DataFrame, path: Path) -> Path:
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
    return path


def table2(agg: pd.DataFrame, metrics: Sequence[str]) -> pd.DataFrame:
    """``mean ± std`` strings per model and metric."""
    rows = []
    for _, r in agg.iterrows():
        row = {"model": r["model"]}
        for m in metrics:
            row[m] = f"{r[f'{m}_mean']:.4f} ± {r[f'{m}_std']:.4f}"
        rows.append(row)
    return pd.DataFrame(rows)


def revin_pairs(agg: pd.DataFrame, specs, metrics: Sequence[str]) -> pd.DataFrame:
    """Relative improvement (%) from RevIN for each model run with and without it."""
    by_key = {}
    for s in specs:
        key = (s.model, tuple(sorted(s.params.items())), s.statics)
        by_key.setdefault(key, {})[s.revin] = s.name
    means = agg.set_index("model")
    rows = []
    for (model, _, _), pair in sorted(by_key.items(), key=lambda kv: str(kv[0])):
        if True in pair and False in pair and {pair[True], pair[False]} <= set(means.index):
            row = {"model": pair[False], "revin_model": pair[True]}
            for m in metrics:
                base = means.loc[pair[False], f"{m}_mean"]
                new = means.loc[pair[True], f"{m}_mean"]
                row[f"{m}_improvement_pct"] = 100.0 * (base - new) / abs(base) if base else np.nan
            rows.append(row)
    return pd.DataFrame(rows)


# ----------------------------------------------------------------- commands


def cmd_profile(cfg: ExperimentConfig) -> int:
    """Profile a dataset: per-feature moments and seasonality."""
    d = load_dataset(cfg)
    d, _, _ = prepare(d, cfg)
    out = cfg.resolved_output_dir()
    rep = profile(d, cfg.profile.min_obs, cfg.profile.alpha, cfg.profile.correction,
                  strict=False)
    files = rep.write(out)
    write_manifest(out, "profile", cfg, files)
    return EXIT_OK


def cmd_forecast(cfg: ExperimentConfig) -> int:
    """Run the forecasting harness for every configured model."""
    d = load_dataset(cfg)
    d, dens, dropped = prepare(d, cfg)
    fc = cfg.folds
    folds = make_folds(d.n_quarters, fc.B, fc.H, fc.min_train, fc.max_train)
    out = cfg.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    specs = cfg.model_specs
    store, failures = ResultStore(), {}
    for spec in specs:
        log.info("running %s over %d folds", spec.name, len(folds))
        try:
            part = run_experiment(d, [spec], folds, cfg.seed, cfg.n_samples, cfg.jobs, dens,
                                  keep_original=dens is not None)
        except CFBenchError as exc:
            failures[spec.name] = f"{type(exc).__name__}: {exc}"
            log.error("%s failed: %s", spec.name, exc)
            continue
        if len(part) == 0:
            reasons = sorted({r for (_, _, r) in part.skipped})
            failures[spec.name] = f"no forecasts produced (skipped: {', '.join(reasons)})"
            log.error("%s produced no forecasts", spec.name)
        store = store.merge(part)
    files = []
    store.write_csv(out / "results.csv")
    files.append(out / "results.csv")
    rs = store
    if cfg.outlier_sigma is not None:
        rs = cohort_filter(store, outlier_sigma=cfg.outlier_sigma)
    metrics = list(cfg.metrics)
    try:
        agg = aggregate(rs, ("model",), metrics)
    except EmptyReport:
        agg = None
    if agg is not None:
        files.append(_write_frame(agg, out / "aggregate.csv"))
        files.append(_write_frame(table2(agg, metrics), out / "table.csv"))
        pairs = revin_pairs(agg, specs, metrics)
        if len(pairs):
            files.append(_write_frame(pairs, out / "revin_improvement.csv"))
        for name, group in VIEWS.items():
            files.append(_write_frame(aggregate(rs, group, metrics), out / f"{name}.csv"))
        # the same overall table with failed fits left out instead of ARMean(1) fallbacks
        try:
            excl = aggregate(rs, ("model",), metrics, mode="excluded")
        except EmptyReport:
            excl = pd.DataFrame(columns=["model"])
        files.append(_write_frame(excl, out / "aggregate_excluded.csv"))
    skipped = pd.DataFrame([(m, f, r, n) for (m, f, r), n in sorted(store.skipped.items())],
                           columns=["model", "fold", "reason", "count"])
    files.append(_write_frame(skipped, out / "skipped.csv"))
    status = {r.status for r in store}
    write_manifest(out, "forecast", cfg, files, {
        "models": [s.name for s in specs],
        "n_folds": len(folds),
        "failures": failures,
        "purged_companies": dropped,
        "n_excluded_outliers": rs.n_excluded,
        "has_fallbacks": "fallback" in status,
    })
    return EXIT_PARTIAL if failures or agg is None else EXIT_OK


def _market(cfg: ExperimentConfig, d: Dataset) -> MarketData:
    if cfg.data.market_csv is not None:
        for p in (cfg.data.market_csv, cfg.data.reference_csv):
            if not Path(p).is_file():
                raise ConfigError(f"market file not found: {p}")
        return load_market_csv(cfg.data.market_csv, d, cfg.data.reference_csv)
    seed = cfg.backtest.market_seed if cfg.backtest.market_seed is not None else cfg.seed
    return generate_market(d, seed, strength=cfg.backtest.strength)


def _strategies(cfg: ExperimentConfig) -> list[StrategySpec]:
    out = []
    for i, s in enumerate(cfg.backtest.strategies or [{}]):
        kw = {"n_stocks": cfg.backtest.n_stocks, "sector_weights": cfg.backtest.sector_weights,
              "seed": cfg.seed, **dict(s)}
        try:
            out.append(StrategySpec(**kw))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"backtest.strategies.{i}: {exc}") from None
    return out


def _forecasts(cfg: ExperimentConfig, st: StrategySpec, d: Dataset, cache: dict):
    if st.source == "random":
        return None
    if st.source == "clairvoyant":
        return clairvoyant_forecasts(d, st.feature)
    if st.source == "external":
        if cfg.data.forecasts_csv is None or not Path(cfg.data.forecasts_csv).is_file():
            raise ConfigError(f"external forecasts file not found: {cfg.data.forecasts_csv}")
        return load_forecasts_csv(cfg.data.forecasts_csv, d)
    path = cfg.backtest.results
    if path is None or not Path(path).is_file():
        raise ConfigError(f"forecast results file not found: {path}")
    if path not in cache:
        cache[path] = ResultStore.read_csv(path)
    if st.model is None:
        raise ConfigError("strategies with source 'model' need a 'model' label")
    return forecasts_from_store(cache[path], d, st.model, st.feature)


def cmd_backtest(cfg: ExperimentConfig) -> int:
    """Simulate factor portfolios from forecasts and market data."""
    d = load_dataset(cfg)
    market = _market(cfg, d)
    strategies = _strategies(cfg)
    cache: dict = {}
    fcs = [_forecasts(cfg, st, d, cache) for st in strategies]
    T = market.n_quarters
    avail = [np.flatnonzero(np.isfinite(f).any(axis=0)) for f in fcs if f is not None]
    if any(a.size == 0 for a in avail):
        raise ConfigError("a forecast source provides no forecasts on the market calendar")
    start = cfg.backtest.start
    if start is None:
        start = max((int(a[0]) for a in avail), default=0)
    end = cfg.backtest.end
    if end is None:
        end = min([T - 1] + [int(a[-1]) + 1 for a in avail])
    if not 0 <= start < end < T:
        raise ConfigError(f"backtest window [{start}, {end}] invalid for {T} quarters")
    out = cfg.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    rows, files, failures = [], [], {}
    for st, f in zip(strategies, fcs):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                state, stats = simulate(st, market, f, start, end)
        except CFBenchError as exc:
            failures[st.name] = f"{type(exc).__name__}: {exc}"
            log.error("%s failed: %s", st.name, exc)
            continue
        files.extend(write_results(out, st.name, state, stats, market, start))
        rows.append({"strategy": st.name, "source": st.source, "signal": st.signal,
                     "rebalance": st.rebalance, **(stats.as_dict() if stats else {})})
    ref = market.reference[start:end + 1]
    if end - start >= 8:
        rows.append({"strategy": "reference", "source": "reference", "signal": "",
                     "rebalance": "", **perf_stats(ref, ref, strict=False).as_dict()})
    files.append(_write_frame(pd.DataFrame(rows), out / "table_backtest.csv"))
    write_manifest(out, "backtest", cfg, files, {"window": [start, end], "failures": failures})
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_synth(cfg: ExperimentConfig) -> int:
    """Write a synthetic panel, schema and market to the output directory."""
    if cfg.data.generator is None:
        raise ConfigError("synth needs a 'data.generator' block")
    spec = GeneratorSpec.from_dict(cfg.data.generator)
    d = generate(spec, cfg.seed)
    out = cfg.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "panel.csv", out / "schema.yaml", out / "market.csv", out / "reference.csv",
             out / "generator.json"]
    write_csv(d, files[0])
    write_schema(d.features, files[1])
    seed = cfg.backtest.market_seed if cfg.backtest.market_seed is not None else cfg.seed
    write_market_csv(generate_market(d, seed, strength=cfg.backtest.strength), files[2], files[3])
    files[4].write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
    write_manifest(out, "synth", cfg, files)
    return EXIT_OK


COMMANDS = {"profile": cmd_profile, "forecast": cmd_forecast, "backtest": cmd_backtest,
            "synth": cmd_synth}


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfbench", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cfbench {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__doc__, description=fn.__doc__)
        sp.add_argument("config", help="experiment YAML file")
        sp.add_argument("--output-dir", help="output directory (overrides config and "
                                              "the CFBENCH_OUTPUT_DIR variable)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--jobs", type=int, help="worker processes for the harness")
        sp.add_argument("--dump-config", action="store_true",
                        help="print the resolved configuration and exit")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(extra: Sequence[str]) -> dict:
    """Parse ``--a.b value`` / ``--a.b=value`` pairs left over by argparse."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"override {tok} needs a value")
            val = extra[i + 1]
            i += 2
        out[key] = val
    return out


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        literal = {k: getattr(args, k) for k in ("output_dir", "seed", "jobs")
                   if getattr(args, k) is not None}
        cfg = load_config(args.config, _overrides(extra), literal)
        if args.dump_config:
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        return COMMANDS[args.command](cfg)
    except DATA_ERRORS as exc:
        print(f"cfbench: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
