"""Domain normalization, outlier purge and global z-scoring of panels.

The pipeline is::

    raw --domain_normalize--> ratios --purge_outliers--> ratios --fit/apply_zscore--> z

and :func:`invert` maps z-space forecasts back to reporting units using only
statistics and denominators frozen at the end of the fit window.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import MissingDenominator, UnknownCompany, ZeroVariance
from .panel import Dataset, QuarterId

__all__ = [
    "DENOM_CLAMP",
    "NormalizationState",
    "clamp_denominator",
    "domain_normalize",
    "domain_denormalize",
    "extract_denominators",
    "purge_outliers",
    "fit_zscore",
    "apply_zscore",
    "invert",
    "invert_dataset",
    "save_state",
    "load_state",
]

DENOM_CLAMP = 1e-6
# Population (divide-by-N) convention for every standard deviation here.
STD_DDOF = 0

REVENUES = "total_revenues"
ASSETS = "total_assets"


def clamp_denominator(x):
    """Push ``x`` away from zero to magnitude >= 1e-6, keeping its sign (0 -> +)."""
    x = np.asarray(x, dtype=float)
    return np.where(x < 0, np.minimum(x, -DENOM_CLAMP), np.maximum(x, DENOM_CLAMP))


def _denominator_columns(d: Dataset) -> tuple[int, int]:
    try:
        return d.feature_index(REVENUES), d.feature_index(ASSETS)
    except KeyError as exc:
        raise MissingDenominator(f"dataset lacks denominator feature {exc}") from None


def _scale_selector(features) -> list[str]:
    """Which raw series each feature is divided by: 'rev', 'assets' or 'one'."""
    out = []
    for f in features:
        if f.denominator == "cross":
            out.append("assets" if f.name == REVENUES else "rev")
        elif f.denominator == "total_revenues":
            out.append("rev")
        elif f.denominator == "total_assets":
            out.append("assets")
        else:
            out.append("one")
    return out


def extract_denominators(d: Dataset) -> dict[str, np.ndarray]:
    """Raw (revenues, assets) per company as ``T x 2`` arrays on the dataset calendar."""
    ir, ia = _denominator_columns(d)
    tensor = d.tensor()
    return {cid: tensor[i][:, [ir, ia]].copy() for i, cid in enumerate(d.companies)}


def domain_normalize(d: Dataset) -> Dataset:
    """Divide flow items by revenues, balance items by assets, and the two by each other."""
    ir, ia = _denominator_columns(d)
    which = _scale_selector(d.features)
    panels = []
    for p in d.panels:
        x = p.values
        rev, assets = x[:, ir], x[:, ia]
        out = np.empty_like(x)
        for j, w in enumerate(which):
            col = x[:, j]
            if w == "one":
                out[:, j] = col
                continue
            den = rev if w == "rev" else assets
            bad = ~np.isnan(col) & np.isnan(den)
            if bad.any():
                q = p.start.shift(int(np.flatnonzero(bad)[0]))
                raise MissingDenominator(
                    f"{p.company_id} {q}: {d.features[j].name} present but "
                    f"{'total_revenues' if w == 'rev' else 'total_assets'} missing")
            out[:, j] = col / clamp_denominator(den)
        panels.append(p.with_values(out))
    return d.with_panels(panels)


def domain_denormalize(dn: Dataset, denominators: Mapping[str, np.ndarray]) -> Dataset:
    """Inverse of :func:`domain_normalize` given the raw denominators."""
    which = _scale_selector(dn.features)
    panels = []
    for p in dn.panels:
        off = p.start - dn.start
        den = np.asarray(denominators[p.company_id])[off:off + p.n_quarters]
        scale = {"rev": clamp_denominator(den[:, 0]), "assets": clamp_denominator(den[:, 1])}
        out = np.array(p.values)
        for j, w in enumerate(which):
            if w != "one":
                out[:, j] = out[:, j] * scale[w]
        panels.append(p.with_values(out))
    return dn.with_panels(panels)


def _moments(x: np.ndarray, axis) -> tuple[np.ndarray, np.ndarray]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns
        mu = np.nanmean(x, axis=axis)
        sd = np.nanstd(x, axis=axis, ddof=STD_DDOF)
    return mu, sd


def purge_outliers(
    d: Dataset,
    z_threshold: float = 30.0,
    rounds: int = 2,
    per_feature: bool = False,
) -> tuple[Dataset, list[str]]:
    """Drop companies with more than one extreme point, re-fitting statistics per round.

    A point is extreme when its global per-feature z-score satisfies
    ``|z| >= z_threshold``. By default extreme points are counted across all
    features of a company; ``per_feature=True`` counts them per feature instead.
    """
    removed: list[str] = []
    current = d
    for _ in range(rounds):
        if len(current) == 0:
            break
        x = current.tensor()
        mu, sd = _moments(x.reshape(-1, x.shape[-1]), axis=0)
        sd = np.where(sd > 0, sd, np.inf)
        with np.errstate(invalid="ignore"):
            extreme = np.abs((x - mu) / sd) >= z_threshold
        if per_feature:
            drop = (extreme.sum(axis=1) > 1).any(axis=1)
        else:
            drop = extreme.sum(axis=(1, 2)) > 1
        if not drop.any():
            continue
        ids = current.companies
        removed.extend(ids[i] for i in np.flatnonzero(drop))
        current = current.with_panels(p for p, k in zip(current.panels, drop) if not k)
    return current, removed


@dataclass(frozen=True)
class NormalizationState:
    """Per-feature z-score statistics plus per-company frozen denominators."""

    features: tuple[str, ...]
    scale_kind: tuple[str, ...]  # 'rev' | 'assets' | 'one' per feature
    mean: np.ndarray
    std: np.ndarray
    train_end: QuarterId
    frozen: Mapping[str, tuple[float, float]]  # company -> (revenues, assets), clamped

    def __post_init__(self):
        for name in ("mean", "std"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not np.all(self.std > 0):
            raise ZeroVariance("all standard deviations must be positive")

    def __eq__(self, other):
        if not isinstance(other, NormalizationState):
            return NotImplemented
        return (self.features == other.features and self.scale_kind == other.scale_kind
                and self.train_end == other.train_end
                and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.std, other.std)
                and dict(self.frozen) == dict(other.frozen))

    __hash__ = None


def _last_valid(x: np.ndarray) -> float:
    ok = np.flatnonzero(~np.isnan(x))
    return float(x[ok[-1]]) if ok.size else np.nan


def fit_zscore(
    d: Dataset,
    train_end: QuarterId,
    denominators: Mapping[str, np.ndarray] | None = None,
) -> NormalizationState:
    """Fit per-feature mean/std over every company and quarter up to ``train_end``.

    ``denominators`` are the raw revenue/asset series from
    :func:`extract_denominators`; when given, the last non-missing in-sample
    value of each is frozen per company for :func:`invert`.
    """
    cut = train_end - d.start + 1
    if not 1 <= cut <= d.n_quarters:
        raise ValueError(f"train_end {train_end} outside calendar starting {d.start}")
    x = d.tensor()[:, :cut, :]
    mu, sd = _moments(x.reshape(-1, x.shape[-1]), axis=0)
    for j, name in enumerate(d.feature_names):
        if not np.isfinite(sd[j]) or sd[j] <= 1e-12 * max(1.0, abs(mu[j])):
            raise ZeroVariance(f"feature {name!r} is constant (or empty) up to {train_end}")
    frozen = {}
    if denominators is not None:
        for cid in d.companies:
            den = np.asarray(denominators[cid])[:cut]
            rev, assets = _last_valid(den[:, 0]), _last_valid(den[:, 1])
            if np.isnan(rev) or np.isnan(assets):
                continue
            frozen[cid] = (float(clamp_denominator(rev)), float(clamp_denominator(assets)))
    kinds = tuple(_scale_selector(d.features))
    return NormalizationState(tuple(d.feature_names), kinds, mu, sd, train_end, frozen)


def apply_zscore(d: Dataset, s: NormalizationState) -> Dataset:
    if tuple(d.feature_names) != s.features:
        raise ValueError("feature order differs from the fitted state")
    return d.with_panels(p.with_values((p.values - s.mean) / s.std) for p in d.panels)


def invert(
    values,
    s: NormalizationState,
    company_id: str,
    features: Sequence[str] | None = None,
    denominators: tuple | None = None,
) -> np.ndarray:
    """Map z-space values (last axis = ``features``) back to reporting units.

    Uses the company's frozen denominators unless ``denominators`` gives a
    ``(revenues, assets)`` pair (scalars or arrays broadcasting against
    ``values[..., 0]``).
    """
    values = np.asarray(values, dtype=float)
    names = list(features) if features is not None else list(s.features)
    idx = [s.features.index(n) for n in names]
    if values.shape[-1] != len(idx):
        raise ValueError(f"last axis has {values.shape[-1]} entries for {len(idx)} features")
    if denominators is None:
        if company_id not in s.frozen:
            raise UnknownCompany(f"no frozen denominators for {company_id!r}")
        rev, assets = s.frozen[company_id]
    else:
        rev, assets = (clamp_denominator(v) for v in denominators)
    ratio = values * s.std[idx] + s.mean[idx]
    out = np.empty_like(ratio)
    for k, j in enumerate(idx):
        kind = s.scale_kind[j]
        scale = rev if kind == "rev" else assets if kind == "assets" else 1.0
        out[..., k] = ratio[..., k] * scale
    return out


def invert_dataset(dz: Dataset, s: NormalizationState,
                   denominators: Mapping[str, np.ndarray]) -> Dataset:
    """Invert a whole z-scored dataset using per-quarter raw denominators."""
    panels = []
    for p in dz.panels:
        off = p.start - dz.start
        den = np.asarray(denominators[p.company_id])[off:off + p.n_quarters]
        panels.append(p.with_values(
            invert(p.values, s, p.company_id, denominators=(den[:, 0], den[:, 1]))))
    return dz.with_panels(panels)


def save_state(s: NormalizationState, path) -> None:
    """Write ``s`` as flat CSV rows (train_end / feature / company records)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["train_end", str(s.train_end)])
        for name, kind, m, sd in zip(s.features, s.scale_kind, s.mean, s.std):
            w.writerow(["feature", name, kind, repr(float(m)), repr(float(sd))])
        for cid in sorted(s.frozen):
            rev, assets = s.frozen[cid]
            w.writerow(["company", cid, repr(rev), repr(assets)])


def load_state(path) -> NormalizationState:
    names, kinds, mu, sd, frozen = [], [], [], [], {}
    train_end = None
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            tag = row[0]
            if tag == "train_end":
                train_end = QuarterId.parse(row[1])
            elif tag == "feature":
                names.append(row[1])
                kinds.append(row[2])
                mu.append(float(row[3]))
                sd.append(float(row[4]))
            elif tag == "company":
                frozen[row[1]] = (float(row[2]), float(row[3]))
            else:
                raise ValueError(f"unknown record type {tag!r}")
    if train_end is None:
        raise ValueError(f"{path}: missing train_end record")
    return NormalizationState(tuple(names), tuple(kinds), np.array(mu), np.array(sd),
                              train_end, frozen)
