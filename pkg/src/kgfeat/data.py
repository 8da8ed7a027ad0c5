"""Tabular dataset loading, column-kind inference, and cross-validation splits."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import date, timedelta
from enum import Enum
from typing import Optional

import numpy as np

EPOCH = date(1970, 1, 1)

_BOOL_TRUE = {"true", "1", "yes"}
_BOOL_FALSE = {"false", "0", "no"}
_MISSING_LEVEL = "⟂missing"
_OTHER_LEVEL = "⟂other"


class Kind(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"
    BOOLEAN = "boolean"
    DATE = "date"


class Task(str, Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


class DataError(ValueError):
    """Raised for malformed input files or invalid split requests."""


@dataclass
class Column:
    """A single typed column; `missing` flags cells that did not carry a value.

    Numeric/Boolean/Date values are stored as float64 (Boolean as 0/1, Date as
    days since 1970-01-01); Categorical values are stored as strings. Date
    columns keep the original text for lossless rendering.
    """

    name: str
    kind: Kind
    values: np.ndarray
    missing: np.ndarray
    raw_text: Optional[list] = None

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class Dataset:
    columns: list
    target: str
    task: Task
    n_rows: int

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def target_column(self) -> Column:
        return self.column(self.target)

    @property
    def feature_columns(self) -> list:
        return [c for c in self.columns if c.name != self.target]


@dataclass
class SchemaConfig:
    target_name: str
    task: Task
    column_kind_overrides: dict = field(default_factory=dict)
    concept_map_path: Optional[str] = None

    @classmethod
    def from_json(cls, path: str) -> "SchemaConfig":
        with open(path) as fh:
            doc = json.load(fh)
        overrides = {k: Kind(v) for k, v in doc.get("column_kind_overrides", {}).items()}
        return cls(
            target_name=doc["target_name"],
            task=Task(doc["task"]),
            column_kind_overrides=overrides,
            concept_map_path=doc.get("concept_map_path"),
        )


def _parse_float(text: str):
    try:
        return float(text)
    except ValueError:
        return None


def _parse_date(text: str):
    try:
        return date.fromisoformat(text)
    except ValueError:
        return None


def _infer_kind(cells: list) -> Kind:
    present = [c for c in cells if c != ""]
    if not present:
        return Kind.CATEGORICAL
    if all(_parse_float(c) is not None for c in present):
        return Kind.NUMERIC
    if all(_parse_date(c) is not None for c in present):
        return Kind.DATE
    lowered = {c.lower() for c in present}
    if len(lowered) <= 2 and lowered <= (_BOOL_TRUE | _BOOL_FALSE):
        return Kind.BOOLEAN
    return Kind.CATEGORICAL


def _build_column(name: str, cells: list, kind: Kind, overridden: bool) -> Column:
    n = len(cells)
    missing = np.array([c == "" for c in cells], dtype=bool)
    if kind == Kind.NUMERIC:
        values = np.full(n, np.nan)
        for i, c in enumerate(cells):
            if missing[i]:
                continue
            v = _parse_float(c)
            if v is None:
                raise DataError(f"column {name!r}: cell {c!r} is not numeric")
            values[i] = v
        return Column(name, kind, values, missing)
    if kind == Kind.DATE:
        values = np.full(n, np.nan)
        for i, c in enumerate(cells):
            if missing[i]:
                continue
            d = _parse_date(c)
            if d is None:
                raise DataError(f"column {name!r}: cell {c!r} is not an ISO date")
            values[i] = (d - EPOCH).days
        return Column(name, kind, values, missing, raw_text=list(cells))
    if kind == Kind.BOOLEAN:
        values = np.full(n, np.nan)
        for i, c in enumerate(cells):
            if missing[i]:
                continue
            low = c.lower()
            if low in _BOOL_TRUE:
                values[i] = 1.0
            elif low in _BOOL_FALSE:
                values[i] = 0.0
            else:
                raise DataError(f"column {name!r}: cell {c!r} is not boolean")
        return Column(name, kind, values, missing)
    values = np.array(cells, dtype=object)
    return Column(name, Kind.CATEGORICAL, values, missing)


def load_csv(path: str, schema: SchemaConfig) -> Dataset:
    """Load an RFC-4180 CSV into a typed Dataset.

    Column kinds come from schema overrides when given, otherwise from
    inference: all-numeric -> Numeric, all-ISO-date -> Date, at most two
    distinct boolean tokens -> Boolean, anything else -> Categorical.
    Empty cells are flagged missing.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    if not rows:
        raise DataError(f"{path}: no data rows")
    if schema.target_name not in header:
        raise DataError(f"{path}: target column {schema.target_name!r} not found")
    for name in schema.column_kind_overrides:
        if name not in header:
            raise DataError(f"override references unknown column {name!r}")

    n = len(rows)
    columns = []
    for j, name in enumerate(header):
        cells = [r[j].strip() if j < len(r) else "" for r in rows]
        override = schema.column_kind_overrides.get(name)
        kind = override if override is not None else _infer_kind(cells)
        columns.append(_build_column(name, cells, kind, override is not None))

    d = Dataset(columns=columns, target=schema.target_name, task=schema.task, n_rows=n)
    tcol = d.target_column
    if schema.task == Task.CLASSIFICATION and tcol.kind not in (Kind.CATEGORICAL, Kind.BOOLEAN):
        raise DataError("classification target must be Categorical or Boolean")
    if schema.task == Task.REGRESSION and tcol.kind != Kind.NUMERIC:
        raise DataError("regression target must be Numeric")
    return d


def kfold_indices(n: int, k: int, seed: int, labels=None):
    """Deterministic k-fold index pairs; `labels` switches to stratified dealing.

    Valid folds partition range(n) with sizes differing by at most one; with
    labels, each class is dealt round-robin so per-fold class counts stay
    within one of each other.
    """
    if k < 2 or k > n:
        raise DataError(f"k={k} invalid for n={n}")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    if labels is None:
        order = rng.permutation(n)
        for pos, idx in enumerate(order):
            folds[pos % k].append(int(idx))
    else:
        labels = np.asarray(labels)
        pos = 0
        for lab in sorted(set(labels.tolist()), key=str):
            idx = np.flatnonzero(labels == lab)
            idx = idx[rng.permutation(len(idx))]
            for i in idx:
                folds[pos % k].append(int(i))
                pos += 1
    out = []
    all_idx = set(range(n))
    for f in folds:
        valid = np.array(sorted(f), dtype=np.int64)
        train = np.array(sorted(all_idx - set(f)), dtype=np.int64)
        out.append((train, valid))
    return out


def split_kfold(d: Dataset, k: int, seed: int, stratified: bool):
    """k-fold splits of a Dataset's row indices; stratified uses the target."""
    labels = None
    if stratified:
        if d.task != Task.CLASSIFICATION:
            raise DataError("stratified splits require a classification task")
        tcol = d.target_column
        if tcol.kind == Kind.CATEGORICAL:
            labels = np.array([str(v) for v in tcol.values], dtype=object)
        else:
            labels = tcol.values.copy()
    return kfold_indices(d.n_rows, k, seed, labels=labels)
