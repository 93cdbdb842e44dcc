"""Quarterly company panels: calendar arithmetic, feature schema and CSV I/O.

Missing observations are stored as NaN inside float arrays; no other sentinel
value is ever used. All containers are immutable once constructed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from .errors import DuplicateQuarter, MalformedRow, UnknownFeatureColumn

__all__ = [
    "QuarterId",
    "FeatureSpec",
    "StaticInfo",
    "Panel",
    "Dataset",
    "DEFAULT_FEATURES",
    "TARGET_FEATURES",
    "GICS_SECTORS",
    "REGIONS",
    "load_csv",
    "write_csv",
    "load_schema",
    "write_schema",
    "align_calendar",
    "has_internal_gap",
    "valid_span",
]

STATEMENT_KINDS = ("income", "cashflow", "balance", "derived")
ROLES = ("covariate", "target")
DENOMINATORS = ("total_revenues", "total_assets", "cross", "none")

GICS_SECTORS = (
    "Energy",
    "Materials",
    "Industrials",
    "Consumer Discretionary",
    "Consumer Staples",
    "Health Care",
    "Financials",
    "Information Technology",
    "Communication Services",
    "Utilities",
    "Real Estate",
)
REGIONS = ("Americas", "Europe", "Japan", "RestOfAsia")

ID_COLUMNS = ("company_id", "sector", "region", "year", "quarter")


@dataclass(frozen=True, order=True)
class QuarterId:
    """A calendar quarter, totally ordered by (year, quarter)."""

    year: int
    quarter: int

    def __post_init__(self):
        if not 1 <= self.quarter <= 4:
            raise ValueError(f"quarter must be in 1..4, got {self.quarter}")

    @property
    def ordinal(self) -> int:
        return self.year * 4 + self.quarter - 1

    @classmethod
    def from_ordinal(cls, k: int) -> "QuarterId":
        return cls(k // 4, k % 4 + 1)

    def shift(self, n: int) -> "QuarterId":
        return QuarterId.from_ordinal(self.ordinal + n)

    def succ(self) -> "QuarterId":
        return self.shift(1)

    def __sub__(self, other: "QuarterId") -> int:
        return self.ordinal - other.ordinal

    @classmethod
    def parse(cls, text: str) -> "QuarterId":
        """Parse ``"2010Q2"`` (case-insensitive)."""
        year, _, q = str(text).upper().partition("Q")
        return cls(int(year), int(q))

    def __str__(self) -> str:
        return f"{self.year}Q{self.quarter}"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    statement_kind: str
    role: str = "covariate"
    denominator: str = "none"

    def __post_init__(self):
        if self.statement_kind not in STATEMENT_KINDS:
            raise ValueError(f"unknown statement kind {self.statement_kind!r}")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.denominator not in DENOMINATORS:
            raise ValueError(f"unknown denominator {self.denominator!r}")

    @property
    def is_target(self) -> bool:
        return self.role == "target"


def _f(name, kind, role="covariate", denom=None):
    if denom is None:
        denom = {"income": "total_revenues", "cashflow": "total_revenues",
                 "balance": "total_assets", "derived": "none"}[kind]
    return FeatureSpec(name, kind, role, denom)


# Flow items (income/cash flow statements) are LTM averages.
DEFAULT_FEATURES: tuple[FeatureSpec, ...] = (
    _f("cost_of_revenues", "income"),
    _f("total_other_operating_expenses", "income"),
    _f("capital_expenditure", "cashflow"),
    _f("income_tax_expense", "income"),
    _f("total_interest_expense", "income"),
    _f("levered_free_cash_flow", "cashflow"),
    _f("cash_from_financing", "cashflow"),
    _f("cash_from_investing", "cashflow"),
    _f("total_cash_and_short_term_investments", "balance"),
    _f("total_current_assets", "balance"),
    _f("total_assets", "balance", denom="cross"),
    _f("total_current_liabilities", "balance"),
    _f("total_liabilities", "balance"),
    _f("total_debt", "balance"),
    _f("sector_revenue_share", "derived"),
    _f("total_revenues", "income", "target", denom="cross"),
    _f("operating_income", "income", "target"),
    _f("net_income", "income", "target"),
    _f("cash_from_operations", "cashflow", "target"),
    _f("total_equity", "balance", "target"),
)
TARGET_FEATURES = tuple(f.name for f in DEFAULT_FEATURES if f.is_target)


def check_paper_schema(features: Sequence[FeatureSpec]) -> None:
    """Raise if ``features`` violates the 20-feature / 5-target layout."""
    names = [f.name for f in features]
    if len(features) != 20:
        raise ValueError(f"expected 20 features, got {len(features)}")
    if len(set(names)) != len(names):
        raise ValueError("duplicate feature names")
    targets = {f.name for f in features if f.is_target}
    if targets != set(TARGET_FEATURES):
        raise ValueError(f"target set must be {TARGET_FEATURES}, got {sorted(targets)}")
    by_name = {f.name: f for f in features}
    for name in ("total_revenues", "total_assets"):
        if name not in by_name or by_name[name].denominator != "cross":
            raise ValueError(f"{name} must use the cross denominator")


@dataclass(frozen=True)
class StaticInfo:
    sector: int
    region: str

    def __post_init__(self):
        if not 0 <= self.sector < len(GICS_SECTORS):
            raise ValueError(f"sector index {self.sector} outside GICS vocabulary")
        if self.region not in REGIONS:
            raise ValueError(f"unknown region {self.region!r}")

    @property
    def sector_name(self) -> str:
        return GICS_SECTORS[self.sector]


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim != 2:
        raise ValueError(f"panel values must be 2-D (T x D), got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Panel:
    """One company's quarterly matrix over a contiguous quarter range."""

    company_id: str
    statics: StaticInfo
    start: QuarterId
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))

    @property
    def n_quarters(self) -> int:
        return self.values.shape[0]

    @property
    def end(self) -> QuarterId:
        return self.start.shift(self.n_quarters - 1)

    @property
    def calendar(self) -> list[QuarterId]:
        return [self.start.shift(i) for i in range(self.n_quarters)]

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    def with_values(self, values, start: QuarterId | None = None) -> "Panel":
        return Panel(self.company_id, self.statics, start or self.start, values)

    def __eq__(self, other):
        if not isinstance(other, Panel):
            return NotImplemented
        return (
            self.company_id == other.company_id
            and self.statics == other.statics
            and self.start == other.start
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """A collection of panels sharing one feature schema and one calendar."""

    panels: tuple[Panel, ...]
    features: tuple[FeatureSpec, ...]
    start: QuarterId
    n_quarters: int
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "panels", tuple(self.panels))
        object.__setattr__(self, "features", tuple(self.features))
        d = len(self.features)
        ids = [p.company_id for p in self.panels]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate company ids in dataset")
        end = self.start.ordinal + self.n_quarters - 1
        for p in self.panels:
            if p.values.shape[1] != d:
                raise ValueError(
                    f"{p.company_id}: {p.values.shape[1]} columns for {d} features")
            if p.start.ordinal < self.start.ordinal or p.end.ordinal > end:
                raise ValueError(f"{p.company_id}: calendar outside dataset calendar")
        object.__setattr__(self, "_index", {cid: i for i, cid in enumerate(ids)})

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.features]

    def feature_index(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise KeyError(name)

    @property
    def target_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.features) if f.is_target]

    @property
    def companies(self) -> list[str]:
        return [p.company_id for p in self.panels]

    @property
    def calendar(self) -> list[QuarterId]:
        return [self.start.shift(i) for i in range(self.n_quarters)]

    def panel(self, company_id: str) -> Panel:
        return self.panels[self._index[company_id]]

    def __len__(self) -> int:
        return len(self.panels)

    def __contains__(self, company_id) -> bool:
        return company_id in self._index

    def tensor(self) -> np.ndarray:
        """Return an ``N x T x D`` array on the dataset calendar (NaN-padded)."""
        out = np.full((len(self.panels), self.n_quarters, len(self.features)), np.nan)
        for i, p in enumerate(self.panels):
            off = p.start - self.start
            out[i, off:off + p.n_quarters] = p.values
        return out

    def sectors(self) -> np.ndarray:
        return np.array([p.statics.sector for p in self.panels], dtype=int)

    def with_panels(self, panels: Iterable[Panel]) -> "Dataset":
        return Dataset(tuple(panels), self.features, self.start, self.n_quarters)

    def from_tensor(self, tensor: np.ndarray) -> "Dataset":
        """Rebuild an aligned dataset from an ``N x T x D`` array."""
        panels = [p.with_values(tensor[i], start=self.start)
                  for i, p in enumerate(self.panels)]
        return self.with_panels(panels)

    def subset(self, companies: Iterable[str]) -> "Dataset":
        keep = set(companies)
        return self.with_panels(p for p in self.panels if p.company_id in keep)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.features == other.features
            and self.start == other.start
            and self.n_quarters == other.n_quarters
            and self.panels == other.panels
        )

    __hash__ = None


def valid_span(x: np.ndarray) -> tuple[int, int] | None:
    """Index range ``[first, last]`` of non-missing values, or None if all missing."""
    ok = np.flatnonzero(~np.isnan(x))
    if ok.size == 0:
        return None
    return int(ok[0]), int(ok[-1])


def has_internal_gap(x: np.ndarray) -> bool:
    """True when a missing value sits between two observed values."""
    span = valid_span(x)
    if span is None:
        return False
    return bool(np.isnan(x[span[0]:span[1] + 1]).any())


def align_calendar(d: Dataset) -> Dataset:
    """Pad every panel with missing rows to the full dataset calendar."""
    tensor = d.tensor()
    return d.from_tensor(tensor)


# --------------------------------------------------------------------- I/O


def _parse_sector(text: str, lineno: int) -> int:
    text = text.strip()
    if text.lstrip("-").isdigit():
        return int(text)
    try:
        return GICS_SECTORS.index(text)
    except ValueError:
        raise MalformedRow(f"line {lineno}: unknown sector {text!r}") from None


def _parse_float(text: str, column: str, lineno: int) -> float:
    text = text.strip()
    if text == "":
        return math.nan
    try:
        value = float(text)
    except ValueError:
        raise MalformedRow(f"line {lineno}: non-numeric {column}={text!r}") from None
    if math.isnan(value):
        raise MalformedRow(f"line {lineno}: literal NaN in {column}; use an empty cell")
    return value


def load_csv(path, schema: Sequence[FeatureSpec] | None = None) -> Dataset:
    """Read a long-format panel CSV into a :class:`Dataset`.

    Rows are grouped by ``company_id`` and sorted by quarter. Quarters missing
    between a company's first and last row become all-missing rows. Empty cells
    become missing values.
    """
    features = tuple(schema) if schema is not None else DEFAULT_FEATURES
    names = [f.name for f in features]
    rows: dict[str, dict[QuarterId, list[float]]] = {}
    statics: dict[str, StaticInfo] = {}

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MalformedRow(f"{path}: empty file") from None
        known = set(ID_COLUMNS) | set(names)
        unknown = [h for h in header if h not in known]
        if unknown:
            raise UnknownFeatureColumn(f"columns not in schema: {unknown}")
        absent = [c for c in (*ID_COLUMNS, *names) if c not in header]
        if absent:
            raise MalformedRow(f"header lacks required columns: {absent}")
        col = {h: i for i, h in enumerate(header)}

        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise MalformedRow(f"line {lineno}: expected {len(header)} cells, got {len(rec)}")
            cid = rec[col["company_id"]].strip()
            if not cid:
                raise MalformedRow(f"line {lineno}: empty company_id")
            try:
                q = QuarterId(int(rec[col["year"]]), int(rec[col["quarter"]]))
            except ValueError as exc:
                raise MalformedRow(f"line {lineno}: bad quarter ({exc})") from None
            try:
                st = StaticInfo(_parse_sector(rec[col["sector"]], lineno),
                                rec[col["region"]].strip())
            except ValueError as exc:
                if isinstance(exc, MalformedRow):
                    raise
                raise MalformedRow(f"line {lineno}: {exc}") from None
            if statics.setdefault(cid, st) != st:
                raise MalformedRow(f"line {lineno}: statics of {cid} change between rows")
            company_rows = rows.setdefault(cid, {})
            if q in company_rows:
                raise DuplicateQuarter(f"line {lineno}: duplicate row for ({cid}, {q})")
            company_rows[q] = [_parse_float(rec[col[n]], n, lineno) for n in names]

    if not rows:
        return Dataset((), features, QuarterId(2009, 1), 0)

    panels = []
    lo = min(min(r) for r in rows.values())
    hi = max(max(r) for r in rows.values())
    for cid in sorted(rows):
        company_rows = rows[cid]
        first, last = min(company_rows), max(company_rows)
        values = np.full((last - first + 1, len(names)), np.nan)
        for q, vals in company_rows.items():
            values[q - first] = vals
        panels.append(Panel(cid, statics[cid], first, values))
    return Dataset(tuple(panels), features, lo, hi - lo + 1)


def write_csv(d: Dataset, path) -> None:
    """Write ``d`` in the long format read by :func:`load_csv`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*ID_COLUMNS, *d.feature_names])
        for p in d.panels:
            for q, row in zip(p.calendar, p.values):
                cells = ["" if math.isnan(v) else repr(float(v)) for v in row]
                w.writerow([p.company_id, p.statics.sector_name, p.statics.region,
                            q.year, q.quarter, *cells])


def load_schema(path) -> tuple[FeatureSpec, ...]:
    """Read a YAML schema file: ``features: [{name, statement, role, denominator}]``."""
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    out = []
    for entry in doc.get("features", []):
        out.append(FeatureSpec(
            name=str(entry["name"]),
            statement_kind=str(entry.get("statement", entry.get("statement_kind"))),
            role=str(entry.get("role", "covariate")),
            denominator=str(entry.get("denominator", "none")),
        ))
    return tuple(out)


def write_schema(features: Sequence[FeatureSpec], path) -> None:
    doc = {"features": [
        {"name": f.name, "statement": f.statement_kind, "role": f.role,
         "denominator": f.denominator}
        for f in features
    ]}
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")


def dataset_from_arrays(
    values: np.ndarray,
    features: Sequence[FeatureSpec] = DEFAULT_FEATURES,
    start: QuarterId = QuarterId(2009, 1),
    company_ids: Sequence[str] | None = None,
    statics: Sequence[StaticInfo] | Mapping[str, StaticInfo] | None = None,
) -> Dataset:
    """Build an aligned dataset from an ``N x T x D`` array."""
    values = np.asarray(values, dtype=float)
    n, t, _ = values.shape
    ids = list(company_ids) if company_ids is not None else [f"C{i:05d}" for i in range(n)]
    if statics is None:
        st = [StaticInfo(i % len(GICS_SECTORS), REGIONS[i % len(REGIONS)]) for i in range(n)]
    elif isinstance(statics, Mapping):
        st = [statics[c] for c in ids]
    else:
        st = list(statics)
    panels = tuple(Panel(ids[i], st[i], start, values[i]) for i in range(n))
    return Dataset(panels, tuple(features), start, t)
