"""Expanding-origin evaluation: folds, model registry, result store and aggregation.

Every fold fits the z-score statistics and the model on quarters up to its
training end only, forecasts the next ``H`` quarters for each eligible
company and scores them in normalized space.
"""

from __future__ import annotations

import csv
import inspect
import logging
import warnings
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import CalendarTooShort, CFBenchError, ConfigError, DegenerateTarget, EmptyReport
from .globalmodels import GLOBAL_MODELS, TrainConfig
from .local import LOCAL_MODELS, ARMeanModel
from .metrics import point_metrics
from .panel import Dataset, has_internal_gap, valid_span
from .preprocess import apply_zscore, fit_zscore, invert
from .prob import ForecastDistribution, crps_fast, sample

log = logging.getLogger(__name__)

__all__ = [
    "FoldSpec",
    "make_folds",
    "ModelCapabilities",
    "CAPABILITIES",
    "ModelSpec",
    "build_model",
    "Record",
    "ResultStore",
    "FoldFit",
    "fit_fold",
    "run_fold",
    "run_experiment",
    "cell_metrics",
    "aggregate",
    "cohort_filter",
    "exclude_outliers",
    "derive_seed",
]

MIN_TRAIN = 16
N_SAMPLES = 100


# ------------------------------------------------------------------- folds


@dataclass(frozen=True, order=True)
class FoldSpec:
    """Training covers calendar indices ``0 .. train_len-1``; testing the next ``H``."""

    train_len: int
    B: int = 12
    H: int = 4

    @property
    def train_end(self) -> int:
        return self.train_len - 1

    @property
    def test_index(self) -> range:
        return range(self.train_len, self.train_len + self.H)


def make_folds(T: int, B: int = 12, H: int = 4, min_train: int = MIN_TRAIN,
               max_train: int | None = None) -> list[FoldSpec]:
    """One fold per training length ``min_train .. T-H``."""
    hi = T - H if max_train is None else min(max_train, T - H)
    if T < min_train + H or hi < min_train:
        raise CalendarTooShort(f"calendar of {T} quarters cannot hold {min_train} + {H}")
    return [FoldSpec(n, B, H) for n in range(min_train, hi + 1)]


# ---------------------------------------------------------------- registry


@dataclass(frozen=True)
class ModelCapabilities:
    kind: str  # 'local' | 'global'
    autoregressive: bool
    multivariate: bool
    covariates: bool
    statics: bool
    revin: bool
    probabilistic: bool


def _local(ar, prob):
    return ModelCapabilities("local", ar, False, False, False, False, prob)


CAPABILITIES: dict[str, ModelCapabilities] = {
    "mean": _local(False, False),
    "armean": _local(True, False),
    "arma": _local(True, True),
    "arima": _local(True, True),
    "autoarima": _local(True, True),
    "theta": _local(True, True),
    "autotheta": _local(True, True),
    "trend": _local(True, True),
    "linreg": ModelCapabilities("global", False, True, True, True, False, True),
    "dlinear": ModelCapabilities("global", False, False, True, True, True, True),
    "nlinear": ModelCapabilities("global", False, False, True, True, True, True),
}

_SPEC_KEYS = ("model", "label", "revin", "statics", "quantiles", "train")


@dataclass(frozen=True)
class ModelSpec:
    """A model entry of an experiment: registry name plus parameters."""

    model: str
    params: Mapping = field(default_factory=dict)
    label: str | None = None
    revin: bool = False
    statics: bool = False
    quantiles: bool = True
    train: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in CAPABILITIES:
            raise ConfigError(f"unknown model {self.model!r}; known: {sorted(CAPABILITIES)}")
        cap = CAPABILITIES[self.model]
        if self.revin and not cap.revin:
            raise ConfigError(f"model {self.model!r} does not support RevIN")
        if self.statics and not cap.statics:
            raise ConfigError(f"model {self.model!r} does not use static covariates")
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "train", dict(self.train))

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        if "model" not in d:
            raise ConfigError(f"model entry without 'model' key: {dict(d)}")
        params = {k: v for k, v in d.items() if k not in _SPEC_KEYS}
        return cls(d["model"], params, d.get("label"), bool(d.get("revin", False)),
                   bool(d.get("statics", False)), bool(d.get("quantiles", True)),
                   dict(d.get("train", {})))

    def to_dict(self) -> dict:
        out = {"model": self.model, **self.params}
        if self.label:
            out["label"] = self.label
        for key in ("revin", "statics"):
            if getattr(self, key):
                out[key] = True
        if not self.quantiles:
            out["quantiles"] = False
        if self.train:
            out["train"] = dict(self.train)
        return out

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        args = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        tag = f"{self.model}({args})" if args else self.model
        if self.revin:
            tag += "+revin"
        if self.statics:
            tag += "+statics"
        return tag

    @property
    def capabilities(self) -> ModelCapabilities:
        return CAPABILITIES[self.model]


def build_model(spec: ModelSpec, targets: Sequence[int] = (), B: int = 12, H: int = 4,
                seed: int = 0):
    """Instantiate an unfitted model for ``spec``."""
    if spec.capabilities.kind == "local":
        cls = LOCAL_MODELS[spec.model]
        params = dict(spec.params)
        if "seed" in inspect.signature(cls.__init__).parameters:
            params.setdefault("seed", seed)
        try:
            return cls(**params)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for {spec.model!r}: {exc}") from None
    cls = GLOBAL_MODELS[spec.model]
    try:
        cfg = TrainConfig(**spec.train)
    except TypeError as exc:
        raise ConfigError(f"bad training parameters: {exc}") from None
    kw = dict(spec.params)
    if spec.revin:
        kw["revin"] = True
    try:
        return cls(list(targets), B=B, H=H, quantiles=spec.quantiles, statics=spec.statics,
                   cfg=cfg, **kw)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {spec.model!r}: {exc}") from None


def derive_seed(seed: int, *keys: int) -> int:
    """Independent, reproducible child seed for a (fold, company, ...) key."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1)[0])


# ------------------------------------------------------------ result store


@dataclass(frozen=True)
class Record:
    model: str
    feature: str
    horizon: int
    fold: int
    company: str
    y: float
    yhat: float
    crps: float
    status: str = "ok"  # 'ok' | 'fallback'
    error: str = ""

    @property
    def key(self) -> tuple:
        return (self.model, self.feature, self.horizon, self.fold, self.company)


class ResultStore:
    """Append-only map from (model, feature, horizon, fold, company) to scores.

    ``fold`` is the training length of the fold. Failed fits are kept as
    ``status='fallback'`` records carrying the ARMean(1) forecast and the error
    text. ``original`` holds optional original-unit point forecasts under the
    same keys.
    """

    def __init__(self, records: Iterable[Record] = (), original: Mapping | None = None,
                 skipped: Mapping | None = None):
        self._records: dict[tuple, Record] = {}
        self.original: dict[tuple, float] = dict(original or {})
        self.skipped: Counter = Counter(skipped or {})
        self.n_excluded = 0
        for r in records:
            self.add(r)

    def add(self, r: Record) -> None:
        if r.key in self._records:
            raise ValueError(f"duplicate result key {r.key}")
        if not (np.isfinite(r.y) and np.isfinite(r.yhat) and np.isfinite(r.crps)):
            raise ValueError(f"non-finite values in record {r.key}")
        self._records[r.key] = r

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        for k in sorted(self._records):
            yield self._records[k]

    def __eq__(self, other):
        if not isinstance(other, ResultStore):
            return NotImplemented
        return (self._records == other._records and self.original == other.original
                and self.skipped == other.skipped)

    __hash__ = None

    def merge(self, other: "ResultStore") -> "ResultStore":
        out = ResultStore(self, self.original, self.skipped)
        for r in other:
            out.add(r)
        for k, v in other.original.items():
            if k in out.original:
                raise ValueError(f"duplicate original-unit key {k}")
            out.original[k] = v
        out.skipped.update(other.skipped)
        return out

    def filter(self, pred) -> "ResultStore":
        keep = [r for r in self if pred(r)]
        orig = {r.key: self.original[r.key] for r in keep if r.key in self.original}
        return ResultStore(keep, orig)

    def to_frame(self) -> pd.DataFrame:
        cols = list(Record.__dataclass_fields__)
        return pd.DataFrame([[getattr(r, c) for c in cols] for r in self], columns=cols)

    @property
    def models(self) -> list[str]:
        return sorted({r.model for r in self})

    # long CSV: one row per (key, metric)
    CSV_HEADER = ("model", "feature", "horizon", "fold", "company", "status", "metric",
                  "value", "error")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_HEADER)
            for r in self:
                vals = [("y", r.y), ("yhat", r.yhat), ("crps", r.crps)]
                if r.key in self.original:
                    vals.append(("yhat_original", self.original[r.key]))
                for metric, v in vals:
                    w.writerow([r.model, r.feature, r.horizon, r.fold, r.company, r.status,
                                metric, repr(float(v)), r.error])

    @classmethod
    def read_csv(cls, path) -> "ResultStore":
        rows: dict[tuple, dict] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                key = (row["model"], row["feature"], int(row["horizon"]), int(row["fold"]),
                       row["company"])
                d = rows.setdefault(key, {"status": row["status"], "error": row["error"]})
                d[row["metric"]] = float(row["value"])
        recs, orig = [], {}
        for key, d in rows.items():
            recs.append(Record(*key, d["y"], d["yhat"], d["crps"], d["status"], d["error"]))
            if "yhat_original" in d:
                orig[key] = d["yhat_original"]
        return cls(recs, orig)


# ------------------------------------------------------------------ folds run


@dataclass
class FoldFit:
    """Everything fitted for one (model, fold): normalization state and models."""

    spec: ModelSpec
    fold: FoldSpec
    state: object
    tensor: np.ndarray  # z-scored, full calendar (test quarters used for scoring only)
    local: dict = field(default_factory=dict)  # (company_idx, feature_idx) -> model | error
    global_model: object = None
    global_error: str = ""
    skipped: Counter = field(default_factory=Counter)

    def artifacts(self) -> dict:
        """Fitted quantities, for reproducibility and leakage checks."""
        out = {"mean": np.asarray(self.state.mean), "std": np.asarray(self.state.std),
               "frozen": dict(self.state.frozen)}
        for key, m in sorted(self.local.items()):
            out[("local",) + key] = m if isinstance(m, str) else _flat_params(m.params())
        if self.global_model is not None:
            out["global"] = {k: np.array(v) for k, v in self.global_model.weights().items()}
        return out


def _flat_params(p: dict) -> dict:
    return {k: (np.asarray(v, dtype=float) if not isinstance(v, (str, tuple, type(None)))
                else v) for k, v in p.items()}


_FIT_ERRORS = (CFBenchError, ValueError, ArithmeticError, np.linalg.LinAlgError)


def _local_series(tz: np.ndarray, c: int, j: int, end: int) -> np.ndarray | None:
    x = tz[c, :end + 1, j]
    span = valid_span(x)
    if span is None or span[1] != end or has_internal_gap(x):
        return None
    return x[span[0]:end + 1]


def fit_fold(d: Dataset, spec: ModelSpec, fold: FoldSpec, seed: int = 0,
             denominators: Mapping | None = None) -> FoldFit:
    """Fit normalization and model(s) using quarters ``<= fold.train_end`` only."""
    train_end_q = d.start.shift(fold.train_end)
    state = fit_zscore(d, train_end_q, denominators)
    tz = apply_zscore(d, state).tensor()
    train_view = tz[:, :fold.train_len, :]
    ff = FoldFit(spec, fold, state, tz)
    targets = d.target_indices
    if spec.capabilities.kind == "local":
        for c in range(len(d)):
            for j in targets:
                x = _local_series(train_view, c, j, fold.train_end)
                if x is None:
                    ff.skipped["gap_in_history"] += 1
                    continue
                model = build_model(spec, seed=derive_seed(seed, fold.train_len, c, j))
                try:
                    ff.local[(c, j)] = model.fit(x)
                except _FIT_ERRORS as exc:
                    ff.local[(c, j)] = f"{type(exc).__name__}: {exc}"
    else:
        model = build_model(spec, targets, fold.B, fold.H, seed)
        try:
            ff.global_model = model.fit(train_view, d.sectors(), np.array(d.companies),
                                        fold.train_end, seed=derive_seed(seed, fold.train_len))
        except _FIT_ERRORS as exc:
            ff.global_error = f"{type(exc).__name__}: {exc}"
    return ff


def _fallback(x: np.ndarray, H: int) -> np.ndarray:
    return ARMeanModel(1).fit(x).forecast(H).mean


def run_fold(d: Dataset, spec: ModelSpec, fold: FoldSpec, seed: int = 0,
             n_samples: int = N_SAMPLES, denominators: Mapping | None = None,
             keep_original: bool = False) -> ResultStore:
    ff = fit_fold(d, spec, fold, seed, denominators)
    tz, H = ff.tensor, fold.H
    names = d.feature_names
    targets = d.target_indices
    test = list(fold.test_index)
    store = ResultStore()
    label = spec.name
    # point forecasts and samples per (company, target)
    preds: dict[tuple[int, int], tuple[np.ndarray, np.ndarray, str, str]] = {}
    if spec.capabilities.kind == "local":
        for (c, j), m in ff.local.items():
            x = _local_series(tz[:, :fold.train_len], c, j, fold.train_end)
            rng = np.random.default_rng(derive_seed(seed, fold.train_len, c, j, 1))
            err = m if isinstance(m, str) else ""
            if not err:
                try:
                    point = m.forecast(H).mean
                    smp = m.sample(H, n_samples, rng) if m.probabilistic else point[None, :]
                    if not (np.all(np.isfinite(point)) and np.all(np.isfinite(smp))):
                        raise FloatingPointError("non-finite forecast")
                except _FIT_ERRORS as exc:
                    err = f"{type(exc).__name__}: {exc}"
            if err:
                point = _fallback(x, H)
                smp = point[None, :]
            preds[(c, j)] = (point, smp, "fallback" if err else "ok", err)
    else:
        lo = fold.train_len - fold.B
        window = tz[:, lo:fold.train_len, :]
        ok = ~np.isnan(window).any(axis=(1, 2)) if lo >= 0 else np.zeros(len(d), bool)
        idx = np.flatnonzero(ok)
        if idx.size < len(d):
            ff.skipped["incomplete_lookback"] += int(len(d) - idx.size) * len(targets)
        out = None
        if ff.global_model is not None and idx.size:
            try:
                out = ff.global_model.predict(window[idx], d.sectors()[idx])
                if not np.all(np.isfinite(out)):
                    raise FloatingPointError("non-finite forecast")
            except _FIT_ERRORS as exc:
                ff.global_error, out = f"{type(exc).__name__}: {exc}", None
        for r, c in enumerate(idx):
            for a, j in enumerate(targets):
                if out is None:
                    x = _local_series(tz[:, :fold.train_len], c, j, fold.train_end)
                    if x is None:
                        ff.skipped["gap_in_history"] += 1
                        continue
                    point = _fallback(x, H)
                    preds[(c, j)] = (point, point[None, :], "fallback", ff.global_error)
                    continue
                if out.ndim == 4:
                    fd = ForecastDistribution.from_raw_quantiles(out[r, a][None])
                    smp = sample(fd, n_samples, derive_seed(seed, fold.train_len, c, j, 1))[0]
                    preds[(c, j)] = (fd.point()[0], smp.T, "ok", "")
                else:
                    preds[(c, j)] = (out[r, a], out[r, a][None, :], "ok", "")
    for (c, j), (point, smp, status, err) in sorted(preds.items()):
        y = tz[c, test, j]
        if np.isnan(y).any():
            ff.skipped["missing_test_value"] += 1
            continue
        crps = crps_fast(np.asarray(smp).T, y)
        cid = d.panels[c].company_id
        for h in range(H):
            store.add(Record(label, names[j], h + 1, fold.train_len, cid, float(y[h]),
                             float(point[h]), float(crps[h]), status, err))
        if keep_original and cid in ff.state.frozen:
            orig = invert(np.asarray(point)[:, None], ff.state, cid, features=[names[j]])[:, 0]
            for h in range(H):
                store.original[(label, names[j], h + 1, fold.train_len, cid)] = float(orig[h])
    for reason, n in ff.skipped.items():
        if n:
            store.skipped[(label, fold.train_len, reason)] += n
    return store


def _task(args):
    return run_fold(*args)


def run_experiment(d: Dataset, specs, folds: Sequence[FoldSpec], seed: int = 0,
                   n_samples: int = N_SAMPLES, jobs: int = 1,
                   denominators: Mapping | None = None,
                   keep_original: bool = False) -> ResultStore:
    """Run every model spec over every fold and collect the scores.

    ``d`` is the domain-normalized, outlier-purged dataset; z-scoring happens
    per fold. Per-company failures become fallback records rather than
    aborting the run.
    """
    if isinstance(specs, ModelSpec):
        specs = [specs]
    tasks = [(d, s, f, seed, n_samples, denominators, keep_original)
             for s in specs for f in folds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_task, tasks))
    else:
        parts = [_task(t) for t in tasks]
    store = ResultStore()
    for p in parts:
        store = store.merge(p)
    return store


# -------------------------------------------------------------- aggregation

CELL_DIMS = ("model", "feature", "horizon", "fold")
CELL_METRICS = ("mae", "mse", "rmse", "mape", "smape", "rse", "r2", "crps")


def cell_metrics(rs: ResultStore, mode: str = "fallback") -> pd.DataFrame:
    """Metrics per (model, feature, horizon, fold) cell computed across companies.

    ``mode='fallback'`` keeps fallback forecasts, ``'excluded'`` drops them.
    """
    if mode not in ("fallback", "excluded"):
        raise ValueError("mode must be 'fallback' or 'excluded'")
    df = rs.to_frame()
    if mode == "excluded" and len(df):
        df = df[df.status == "ok"]
    if not len(df):
        raise EmptyReport("no records to aggregate")
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateTarget)
        for key, g in df.groupby(list(CELL_DIMS), sort=True):
            pm = point_metrics(g.y.to_numpy(), g.yhat.to_numpy()).as_dict()
            rows.append({**dict(zip(CELL_DIMS, key)), "n": len(g), **pm,
                         "crps": float(g.crps.mean())})
    return pd.DataFrame(rows)


def aggregate(rs: ResultStore, group_by: Sequence[str] = ("model",),
              metrics: Sequence[str] = CELL_METRICS, mode: str = "fallback") -> pd.DataFrame:
    """Mean and population std of cell metrics over the cells in each group.

    Typical views: ``("model",)`` overall, ``("model", "feature")``,
    ``("model", "fold")`` per origin and ``("model", "horizon")``.
    """
    bad = set(group_by) - set(CELL_DIMS)
    if bad:
        raise ValueError(f"cannot group by {sorted(bad)}")
    cells = cell_metrics(rs, mode)
    out = []
    groups = cells.groupby(list(group_by), sort=True) if group_by else [((), cells)]
    for key, g in groups:
        key = key if isinstance(key, tuple) else (key,)
        row = dict(zip(group_by, key))
        row["n_cells"] = len(g)
        for m in metrics:
            v = g[m].to_numpy(dtype=float)
            v = v[np.isfinite(v)]
            row[f"{m}_mean"] = float(v.mean()) if v.size else float("nan")
            row[f"{m}_std"] = float(v.std(ddof=0)) if v.size else float("nan")
        out.append(row)
    return pd.DataFrame(out)


def exclude_outliers(rs: ResultStore, metric: str = "crps",
                     k: float = 4.0) -> tuple[ResultStore, int]:
    """Drop records whose ``metric`` lies more than ``k`` std from the mean."""
    recs = list(rs)
    if not recs:
        return ResultStore(), 0
    if metric == "abs_error":
        v = np.array([abs(r.y - r.yhat) for r in recs])
    else:
        v = np.array([getattr(r, metric) for r in recs], dtype=float)
    mu, sd = v.mean(), v.std()
    keep = np.abs(v - mu) <= k * sd if sd > 0 else np.ones(v.size, bool)
    kept = [r for r, ok in zip(recs, keep) if ok]
    orig = {r.key: rs.original[r.key] for r in kept if r.key in rs.original}
    return ResultStore(kept, orig), int((~keep).sum())


def cohort_filter(rs: ResultStore, companies=None, features=None, horizons=None,
                  time_range: tuple[int, int] | None = None, models=None,
                  outlier_sigma: float | None = None,
                  outlier_metric: str = "crps") -> ResultStore:
    """Sub-store restricted to the given sets (``None`` means no restriction).

    ``time_range`` is an inclusive range of fold training lengths. With
    ``outlier_sigma`` the metric-outlier exclusion is applied afterwards and
    the number removed is stored in ``n_excluded``.
    """
    sets = {name: (None if v is None else set(v)) for name, v in
            (("company", companies), ("feature", features), ("horizon", horizons),
             ("model", models))}

    def ok(r: Record) -> bool:
        for name, allowed in sets.items():
            if allowed is not None and getattr(r, name) not in allowed:
                return False
        return time_range is None or time_range[0] <= r.fold <= time_range[1]

    out = rs.filter(ok)
    if outlier_sigma is not None:
        out, n = exclude_outliers(out, outlier_metric, outlier_sigma)
        out.n_excluded = n
    return out


def fold_summary(rs: ResultStore) -> pd.DataFrame:
    """Counts of ok / fallback records per model, for run manifests."""
    df = rs.to_frame()
    if not len(df):
        return pd.DataFrame(columns=["model", "status", "n"])
    return df.groupby(["model", "status"]).size().reset_index(name="n")
