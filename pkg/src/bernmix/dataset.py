"""Loading, thresholding, and binarization of delimited indicator tables.

The sampler consumes a 0/1 matrix with an observedness mask.  Continuous
source columns (rates, percentages, dollar amounts) are cut at per-column
thresholds: strictly above the threshold codes 1, at or below codes 0.
Missing cells stay missing and are handled by the model, not imputed here.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

MISSING_SENTINELS = ("", "NA", "NaN", "nan", "N/A", ".")

THRESHOLD_KINDS = ("median_split", "positive_split", "fixed")


@dataclass(frozen=True)
class RawTable:
    """Numeric table keyed by unit id, NaN marks missing cells."""

    unit_ids: list[str]
    column_names: list[str]
    values: np.ndarray  # (n, p) float64, NaN = missing

    def __post_init__(self):
        n, p = self.values.shape
        if n != len(self.unit_ids):
            raise ValueError(f"{len(self.unit_ids)} unit ids for {n} rows")
        if p != len(self.column_names):
            raise ValueError(f"{len(self.column_names)} names for {p} columns")
        seen = set()
        for uid in self.unit_ids:
            if uid in seen:
                raise ValueError(f"duplicate unit id {uid!r}")
            seen.add(uid)

    @property
    def n_units(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_names.index(name)]


@dataclass(frozen=True)
class ThresholdRule:
    """How one column is cut.  `value` is required for kind='fixed' only."""

    kind: str
    value: float | None = None

    def __post_init__(self):
        if self.kind not in THRESHOLD_KINDS:
            raise ValueError(f"unknown threshold kind {self.kind!r}")
        if self.kind == "fixed" and self.value is None:
            raise ValueError("fixed threshold rule needs a value")


@dataclass(frozen=True)
class ThresholdSpec:
    """Resolved cut points, one per column of the table they were fit on."""

    rules: dict[str, ThresholdRule]
    thresholds: dict[str, float]

    def __post_init__(self):
        if set(self.rules) != set(self.thresholds):
            raise ValueError("rules and thresholds cover different columns")


@dataclass
class BinaryDataset:
    """0/1 design matrix plus observedness mask, aligned to unit ids."""

    x: np.ndarray  # (n, p) int8, 0 where unobserved
    observed: np.ndarray  # (n, p) bool
    unit_ids: list[str]
    column_names: list[str]

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int8)
        self.observed = np.asarray(self.observed, dtype=bool)
        if self.x.shape != self.observed.shape:
            raise ValueError("x and observed mask shapes differ")
        if not np.isin(self.x, (0, 1)).all():
            raise ValueError("binary matrix contains values other than 0/1")
        if (self.x[~self.observed] != 0).any():
            raise ValueError("unobserved cells must be stored as 0")

    @property
    def n_units(self) -> int:
        return self.x.shape[0]

    @property
    def n_variables(self) -> int:
        return self.x.shape[1]


def _parse_cell(text: str, row: int, column: str, missing: tuple[str, ...]) -> float:
    stripped = text.strip()
    if stripped in missing:
        return math.nan
    try:
        return float(stripped)
    except ValueError:
        raise ValueError(
            f"row {row}: could not parse {text!r} in column {column!r} as a number"
        ) from None


def load_table(
    path,
    delimiter: str = ",",
    id_column: str | None = None,
    missing_values: tuple[str, ...] = MISSING_SENTINELS,
) -> RawTable:
    """Read a delimited text file with a header row into a RawTable.

    The id column defaults to the first column.  Rows whose length differs
    from the header and cells that are neither numeric nor a missing
    sentinel raise ValueError with the offending 1-based data row number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        if id_column is None:
            id_column = header[0]
        if id_column not in header:
            raise ValueError(f"id column {id_column!r} not in header {header}")
        id_pos = header.index(id_column)
        column_names = [h for i, h in enumerate(header) if i != id_pos]
        if not column_names:
            raise ValueError(f"{path}: no data columns besides the id column")

        unit_ids: list[str] = []
        rows: list[list[float]] = []
        for row_number, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise ValueError(
                    f"row {row_number}: expected {len(header)} fields, got {len(row)}"
                )
            unit_ids.append(row[id_pos].strip())
            rows.append(
                [
                    _parse_cell(cell, row_number, header[i], missing_values)
                    for i, cell in enumerate(row)
                    if i != id_pos
                ]
            )
    if not rows:
        raise ValueError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=np.float64)
    return RawTable(unit_ids=unit_ids, column_names=column_names, values=values)


def compute_thresholds(
    table: RawTable,
    rules: dict[str, ThresholdRule] | None = None,
    default_kind: str = "median_split",
) -> ThresholdSpec:
    """Resolve a cut point for every column of the table.

    Columns without an explicit rule get `default_kind`.  median_split uses
    the sample median over non-missing values, positive_split cuts at zero,
    fixed echoes the supplied value.
    """
    rules = dict(rules or {})
    for name in rules:
        if name not in table.column_names:
            raise ValueError(f"threshold rule for unknown column {name!r}")
    resolved: dict[str, ThresholdRule] = {}
    thresholds: dict[str, float] = {}
    for name in table.column_names:
        rule = rules.get(name, ThresholdRule(default_kind))
        resolved[name] = rule
        if rule.kind == "fixed":
            thresholds[name] = float(rule.value)
        elif rule.kind == "positive_split":
            thresholds[name] = 0.0
        else:
            col = table.column(name)
            observed = col[~np.isnan(col)]
            if observed.size == 0:
                raise ValueError(f"column {name!r} has no observed values")
            thresholds[name] = float(np.median(observed))
    return ThresholdSpec(rules=resolved, thresholds=thresholds)


def binarize(table: RawTable, spec: ThresholdSpec) -> BinaryDataset:
    """Cut every column at its threshold: strictly above -> 1, else 0.

    Missing cells stay missing (observed mask False, matrix stores 0).
    """
    missing_rules = [c for c in table.column_names if c not in spec.thresholds]
    if missing_rules:
        raise ValueError(f"no threshold for columns {missing_rules}")
    cuts = np.array([spec.thresholds[c] for c in table.column_names])
    observed = ~np.isnan(table.values)
    x = np.zeros(table.values.shape, dtype=np.int8)
    filled = np.where(observed, table.values, -np.inf)
    x[filled > cuts] = 1
    x[~observed] = 0
    return BinaryDataset(
        x=x,
        observed=observed,
        unit_ids=list(table.unit_ids),
        column_names=list(table.column_names),
    )


def save_binary_dataset(dataset: BinaryDataset, path, delimiter: str = ",") -> None:
    """Write the 0/1 matrix as delimited text, NA for unobserved cells."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(["unit_id", *dataset.column_names])
        for i, uid in enumerate(dataset.unit_ids):
            row = [
                str(int(dataset.x[i, j])) if dataset.observed[i, j] else "NA"
                for j in range(dataset.n_variables)
            ]
            writer.writerow([uid, *row])


def load_binary_dataset(path, delimiter: str = ",") -> BinaryDataset:
    """Read a matrix written by save_binary_dataset.

    Cells must be 0, 1, or a missing sentinel; anything else is an error.
    """
    table = load_table(path, delimiter=delimiter)
    values = table.values
    observed = ~np.isnan(values)
    seen = values[observed]
    if not np.isin(seen, (0.0, 1.0)).all():
        bad = sorted(set(seen[~np.isin(seen, (0.0, 1.0))].tolist()))
        raise ValueError(f"binary matrix contains non-binary values {bad}")
    x = np.where(observed, values, 0.0).astype(np.int8)
    return BinaryDataset(
        x=x,
        observed=observed,
        unit_ids=table.unit_ids,
        column_names=table.column_names,
    )


def save_threshold_manifest(spec: ThresholdSpec, path) -> None:
    payload = {
        name: {
            "kind": spec.rules[name].kind,
            "threshold": spec.thresholds[name],
        }
        for name in sorted(spec.thresholds)
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_threshold_manifest(path) -> ThresholdSpec:
    with open(path) as fh:
        payload = json.load(fh)
    rules = {}
    thresholds = {}
    for name, entry in payload.items():
        thr = float(entry["threshold"])
        kind = entry["kind"]
        rules[name] = ThresholdRule(kind, thr if kind == "fixed" else None)
        thresholds[name] = thr
    return ThresholdSpec(rules=rules, thresholds=thresholds)
