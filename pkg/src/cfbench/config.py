"""Experiment configuration: YAML schema, defaults, validation and overrides.

A configuration file looks like::

    seed: 0
    output_dir: results
    data:
      csv: panel.csv              # or a generator block:
      generator: {n_companies: 200, T: 59, mode: linkage}
      market_csv: market.csv      # backtest only; synthetic market if absent
      reference_csv: reference.csv
    preprocess: {domain_normalize: true, purge_outliers: true, z_threshold: 30.0}
    folds: {B: 12, H: 4, min_train: 16}
    models:
      - {model: mean}
      - {model: arma, p: 1, q: 1}
      - {model: nlinear, revin: true, train: {epochs: 20}}
    metrics: [mae, mse, smape, crps]
    backtest:
      strategies:
        - {signal: operating_income_over_ev, source: clairvoyant, rebalance: yearly}

Any key can be overridden from the command line with a dot path, for example
``--models.0.p 4`` or ``--folds.B 8``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .harness import CELL_METRICS, ModelSpec
from .synth import GeneratorSpec

__all__ = [
    "OUTPUT_ENV",
    "DataConfig",
    "PreprocessConfig",
    "FoldConfig",
    "BacktestConfig",
    "ProfileConfig",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "dump_config",
    "apply_overrides",
    "config_digest",
]

OUTPUT_ENV = "CFBENCH_OUTPUT_DIR"
DEFAULT_OUTPUT = "cfbench-out"


def _build(cls, raw, where: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    known = {f.name for f in fields(cls)}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class DataConfig:
    csv: str | None = None
    schema: str | None = None
    generator: dict | None = None
    market_csv: str | None = None
    reference_csv: str | None = None
    forecasts_csv: str | None = None

    def __post_init__(self):
        if self.csv is None and self.generator is None:
            raise ValueError("either 'csv' or 'generator' is required")
        if self.csv is not None and self.generator is not None:
            raise ValueError("'csv' and 'generator' are mutually exclusive")
        if (self.market_csv is None) != (self.reference_csv is None):
            raise ValueError("'market_csv' and 'reference_csv' go together")
        if self.generator is not None:
            GeneratorSpec.from_dict(self.generator)


@dataclass(frozen=True)
class PreprocessConfig:
    domain_normalize: bool = True
    purge_outliers: bool = True
    z_threshold: float = 30.0

    def __post_init__(self):
        if self.z_threshold <= 0:
            raise ValueError("z_threshold must be positive")


@dataclass(frozen=True)
class FoldConfig:
    B: int = 12
    H: int = 4
    min_train: int = 16
    max_train: int | None = None

    def __post_init__(self):
        if self.B <= 0 or self.H <= 0:
            raise ValueError("B and H must be positive")
        if self.min_train < 1:
            raise ValueError("min_train must be positive")


@dataclass(frozen=True)
class BacktestConfig:
    strategies: list = field(default_factory=list)
    n_stocks: int = 50
    start: int | None = None  # quarter index of the first rebalance
    end: int | None = None
    sector_weights: dict | None = None
    results: str | None = None  # long CSV of a prior forecast run
    market_seed: int | None = None
    strength: float = 0.06


@dataclass(frozen=True)
class ProfileConfig:
    min_obs: int = 8
    alpha: float = 0.05
    correction: str = "bonferroni"


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig
    seed: int = 0
    output_dir: str | None = None
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    folds: FoldConfig = field(default_factory=FoldConfig)
    models: list = field(default_factory=list)
    metrics: list = field(default_factory=lambda: list(CELL_METRICS))
    n_samples: int = 100
    jobs: int = 1
    outlier_sigma: float | None = None
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    profile: ProfileConfig = field(default_factory=ProfileConfig)

    @property
    def model_specs(self) -> list[ModelSpec]:
        return [ModelSpec.from_dict(m) for m in self.models]

    def resolved_output_dir(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {"data": DataConfig, "preprocess": PreprocessConfig, "folds": FoldConfig,
             "backtest": BacktestConfig, "profile": ProfileConfig}


def parse_config(raw: Mapping) -> ExperimentConfig:
    """Validate a plain mapping and build an :class:`ExperimentConfig`."""
    if not isinstance(raw, Mapping):
        raise ConfigError("configuration must be a mapping")
    raw = copy.deepcopy(dict(raw))
    if "seed" not in raw:
        raise ConfigError("'seed' is required")
    if "data" not in raw:
        raise ConfigError("'data' section is required")
    kw = {}
    for key, cls in _SECTIONS.items():
        if key in raw:
            kw[key] = _build(cls, raw.pop(key), key)
    top = {f.name for f in fields(ExperimentConfig)} - set(_SECTIONS)
    extra = set(raw) - top
    if extra:
        raise ConfigError(f"unknown top-level keys {sorted(extra)}")
    kw.update(raw)
    if not isinstance(kw["seed"], int) or isinstance(kw["seed"], bool):
        raise ConfigError("'seed' must be an integer")
    models = kw.get("models", [])
    if not isinstance(models, list):
        raise ConfigError("'models' must be a list")
    for i, m in enumerate(models):
        if not isinstance(m, Mapping):
            raise ConfigError(f"models.{i}: expected a mapping")
        ModelSpec.from_dict(m)  # raises ConfigError for unknown models
    kw["models"] = [dict(m) for m in models]
    bad = set(kw.get("metrics", [])) - set(CELL_METRICS)
    if bad:
        raise ConfigError(f"unknown metrics {sorted(bad)}; known: {list(CELL_METRICS)}")
    if kw.get("jobs", 1) < 1:
        raise ConfigError("'jobs' must be at least 1")
    try:
        return ExperimentConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False)


def load_config(path, overrides: Mapping[str, Any] | None = None,
                literal: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Read a YAML file, apply dot-path overrides and validate.

    ``overrides`` values that are strings are parsed as YAML scalars;
    ``literal`` values are set as given.
    """
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML: {exc}") from None
    if overrides:
        raw = apply_overrides(raw, overrides)
    if literal:
        raw = apply_overrides(raw, literal, parse=False)
    return parse_config(raw)


def apply_overrides(raw: Mapping, overrides: Mapping[str, Any], parse: bool = True) -> dict:
    """Return a copy of ``raw`` with each ``a.b.0.c`` path set to its value.

    String values are parsed as YAML scalars so ``"4"`` becomes ``4``.
    Missing mapping keys are created; list indices must exist or equal the
    list length (append).
    """
    out = copy.deepcopy(dict(raw))
    for path, value in overrides.items():
        if parse and isinstance(value, str):
            try:
                value = yaml.safe_load(value)
            except yaml.YAMLError:
                pass
        keys = path.split(".")
        node: Any = out
        for depth, k in enumerate(keys):
            last = depth == len(keys) - 1
            if isinstance(node, list):
                try:
                    i = int(k)
                except ValueError:
                    raise ConfigError(f"override {path}: {k!r} is not a list index") from None
                if i == len(node):
                    node.append({})
                if not 0 <= i < len(node):
                    raise ConfigError(f"override {path}: index {i} out of range")
                if last:
                    node[i] = value
                else:
                    node = node[i]
            elif isinstance(node, dict):
                if last:
                    node[k] = value
                else:
                    node = node.setdefault(k, {})
            else:
                raise ConfigError(f"override {path}: cannot descend into a scalar")
    return out


def config_digest(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form, ignoring the output location and jobs."""
    d = cfg.to_dict()
    d.pop("output_dir", None)
    d.pop("jobs", None)
    text = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()
