"""Dataset representation, CSV ingestion, period filtering, derived time
covariates, and covariate normalization."""

from __future__ import annotations

import csv
import datetime
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "CovariateSchema",
    "ObservationalDataset",
    "GroupView",
    "PeriodBounds",
    "NormalizationSpec",
    "ColumnMap",
    "DateRecord",
    "TimeCovariates",
    "load_dataset",
    "save_dataset",
    "load_saved_dataset",
    "read_table",
    "derive_time_covariates",
    "filter_age_over",
    "fit_normalization",
]

KINDS = ("continuous", "binary")


@dataclass(frozen=True)
class CovariateSchema:
    """Ordered covariate names with their kind (continuous or binary)."""

    entries: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("schema needs at least one covariate")
        names = [name for name, _ in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("covariate names must be unique")
        for name, kind in self.entries:
            if kind not in KINDS:
                raise ValueError(f"unknown covariate kind {kind!r} for {name!r}")

    @classmethod
    def of(cls, *entries: tuple[str, str]) -> "CovariateSchema":
        return cls(tuple(entries))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.entries)

    @property
    def size(self) -> int:
        return len(self.entries)

    def kind(self, name: str) -> str:
        for entry_name, kind in self.entries:
            if entry_name == name:
                return kind
        raise KeyError(f"unknown covariate {name!r}")

    def index(self, name: str) -> int:
        for pos, (entry_name, _) in enumerate(self.entries):
            if entry_name == name:
                return pos
        raise KeyError(f"unknown covariate {name!r}")

    def subset(self, names: Sequence[str]) -> "CovariateSchema":
        return CovariateSchema(tuple((n, self.kind(n)) for n in names))


def _validate_binary(values: np.ndarray, label: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if not np.all(np.isin(values, (0.0, 1.0))):
        raise ValueError(f"{label} not in {{0,1}}")
    return values


@dataclass(frozen=True)
class ObservationalDataset:
    """Immutable rows (y, z, x) with a covariate schema.

    y is the binary outcome, z the binary sensitive attribute (treatment),
    and x the covariate vector matching the schema.
    """

    schema: CovariateSchema
    y: np.ndarray
    z: np.ndarray
    x: np.ndarray
    meta: str | None = None

    def __post_init__(self):
        y = _validate_binary(self.y, "outcome")
        z = _validate_binary(self.z, "treatment")
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2 or x.shape != (y.shape[0], self.schema.size):
            raise ValueError("covariate matrix shape must be (rows, schema size)")
        if y.shape != z.shape or y.ndim != 1:
            raise ValueError("y and z must be 1-d arrays of equal length")
        if not np.all(np.isfinite(x)):
            raise ValueError("covariates contain missing or non-finite values")
        for name in self.schema.names:
            if self.schema.kind(name) == "binary":
                col = x[:, self.schema.index(name)]
                if not np.all(np.isin(col, (0.0, 1.0))):
                    raise ValueError(f"binary covariate {name!r} not in {{0,1}}")
        for arr, key in ((y, "y"), (z, "z"), (x, "x")):
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def n_treated(self) -> int:
        return int(self.z.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def covariate(self, name: str) -> np.ndarray:
        return self.x[:, self.schema.index(name)]

    def subset(self, index: np.ndarray, meta: str | None = None) -> "ObservationalDataset":
        return ObservationalDataset(
            self.schema,
            self.y[index].copy(),
            self.z[index].copy(),
            self.x[index].copy(),
            self.meta if meta is None else meta,
        )

    def select_covariates(self, names: Sequence[str]) -> "ObservationalDataset":
        cols = [self.schema.index(n) for n in names]
        return ObservationalDataset(
            self.schema.subset(names),
            self.y.copy(),
            self.z.copy(),
            self.x[:, cols].copy(),
            self.meta,
        )

    def with_covariate(self, name: str, kind: str, values: np.ndarray) -> "ObservationalDataset":
        schema = CovariateSchema(self.schema.entries + ((name, kind),))
        x = np.column_stack([self.x, np.asarray(values, dtype=float)])
        return ObservationalDataset(schema, self.y.copy(), self.z.copy(), x, self.meta)

    def split_groups(self) -> tuple["GroupView", "GroupView"]:
        """Return (control, treated) views; control is z = 0."""
        idx0 = np.flatnonzero(self.z == 0)
        idx1 = np.flatnonzero(self.z == 1)
        return (
            GroupView(self.y[idx0], self.x[idx0], idx0),
            GroupView(self.y[idx1], self.x[idx1], idx1),
        )


@dataclass(frozen=True)
class GroupView:
    """One treatment group's outcomes, covariates and original row indices."""

    y: np.ndarray
    x: np.ndarray
    index: np.ndarray

    @property
    def n(self) -> int:
        return int(self.y.shape[0])


@dataclass(frozen=True)
class PeriodBounds:
    """Closed date interval."""

    start: datetime.date
    end: datetime.date

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError("period start must not be after its end")

    @classmethod
    def parse(cls, start: str, end: str) -> "PeriodBounds":
        return cls(datetime.date.fromisoformat(start), datetime.date.fromisoformat(end))

    def contains(self, day: datetime.date) -> bool:
        return self.start <= day <= self.end


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-covariate scale (pooled observed max minus min)."""

    scales: dict[str, float]

    def __post_init__(self):
        for name, scale in self.scales.items():
            if not (scale > 0):
                raise ValueError(f"scale for {name!r} must be positive")

    def scale_vector(self, names: Sequence[str]) -> np.ndarray:
        missing = [n for n in names if n not in self.scales]
        if missing:
            raise KeyError(f"normalization missing covariates {missing}")
        return np.array([self.scales[n] for n in names], dtype=float)

    def apply(self, x: np.ndarray, names: Sequence[str]) -> np.ndarray:
        return np.asarray(x, dtype=float) / self.scale_vector(names)


@dataclass(frozen=True)
class ColumnMap:
    """Maps dataset fields to file column names."""

    outcome: str = "y"
    treatment: str = "z"
    covariates: dict[str, str] = field(default_factory=dict)

    def column_for(self, covariate: str) -> str:
        return self.covariates.get(covariate, covariate)


def read_table(source, delimiter: str = ",") -> tuple[list[str], list[list[str]]]:
    """Read a delimited text table with a header row.

    `source` may be a path or a text stream. Returns (header, rows).
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as handle:
            return read_table(handle, delimiter)
    reader = csv.reader(source, delimiter=delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("empty input: missing header row") from None
    rows = [row for row in reader if row]
    return header, rows


def load_dataset(
    source,
    schema: CovariateSchema,
    column_map: ColumnMap | None = None,
    *,
    delimiter: str = ",",
    on_bad_row: str = "error",
    meta: str | None = None,
) -> ObservationalDataset:
    """Parse a delimited text stream into a dataset.

    on_bad_row: "error" rejects the whole input when a row has a missing or
    unparseable required field; "drop" skips such rows.
    """
    if on_bad_row not in ("error", "drop"):
        raise ValueError("on_bad_row must be 'error' or 'drop'")
    column_map = column_map or ColumnMap()
    header, raw_rows = read_table(source, delimiter)
    positions: dict[str, int] = {}
    needed = [column_map.outcome, column_map.treatment]
    needed += [column_map.column_for(n) for n in schema.names]
    for col in needed:
        if col not in header:
            raise ValueError(f"missing column {col!r}")
        positions[col] = header.index(col)

    ys: list[float] = []
    zs: list[float] = []
    xs: list[list[float]] = []
    for line_no, row in enumerate(raw_rows, start=2):
        values: list[float] = []
        ok = True
        for col in needed:
            pos = positions[col]
            cell = row[pos].strip() if pos < len(row) else ""
            if cell == "":
                ok = False
                break
            try:
                values.append(float(cell))
            except ValueError:
                ok = False
                break
        if not ok:
            if on_bad_row == "drop":
                continue
            raise ValueError(f"unparseable or missing field on line {line_no}")
        ys.append(values[0])
        zs.append(values[1])
        xs.append(values[2:])
    if not ys:
        raise ValueError("empty dataset")
    return ObservationalDataset(
        schema, np.array(ys), np.array(zs), np.array(xs), meta
    )


def save_dataset(
    dataset: ObservationalDataset,
    path: str | Path,
    normalization: NormalizationSpec | None = None,
) -> None:
    """Write the dataset as CSV plus a `<path>.schema.json` sidecar."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["y", "z", *dataset.schema.names])
        for i in range(dataset.n):
            writer.writerow(
                [repr(float(dataset.y[i])), repr(float(dataset.z[i]))]
                + [repr(float(v)) for v in dataset.x[i]]
            )
    sidecar = {
        "covariates": [{"name": n, "kind": k} for n, k in dataset.schema.entries],
        "meta": dataset.meta,
    }
    if normalization is not None:
        sidecar["normalization"] = dict(sorted(normalization.scales.items()))
    with open(path.with_name(path.name + ".schema.json"), "w", encoding="utf-8") as handle:
        json.dump(sidecar, handle, indent=2, sort_keys=True)
        handle.write("\n")


def load_saved_dataset(path: str | Path) -> ObservationalDataset:
    """Reload a dataset written by save_dataset, using its sidecar schema."""
    path = Path(path)
    with open(path.with_name(path.name + ".schema.json"), "r", encoding="utf-8") as handle:
        sidecar = json.load(handle)
    schema = CovariateSchema(
        tuple((c["name"], c["kind"]) for c in sidecar["covariates"])
    )
    return load_dataset(path, schema, meta=sidecar.get("meta"))


@dataclass(frozen=True)
class DateRecord:
    """Per-individual dates; hospitalisation date may be absent."""

    test_date: datetime.date
    hosp_date: datetime.date | None = None


@dataclass(frozen=True)
class TimeCovariates:
    """Derived day counts from the period's earliest positive test.

    Hospital fields are NaN where no valid hospitalisation date exists.
    violations lists (row index, reason) for flagged rows.
    """

    time_until_test: np.ndarray
    time_until_hosp: np.ndarray
    time_positive_to_hosp: np.ndarray
    violations: tuple[tuple[int, str], ...]


# admissions up to this many days before the positive test still count as
# hospitalised-with-the-infection; earlier admissions are flagged
PRE_POSITIVE_WINDOW_DAYS = 21


def derive_time_covariates(
    records: Sequence[DateRecord], period: PeriodBounds
) -> TimeCovariates:
    """Compute time_until_test, time_until_hosp, time_positive_to_hosp.

    All three count days from the earliest positive test in the period.
    A hospitalisation more than 21 days before the test is flagged and its
    hospital fields set to NaN rather than kept.
    """
    if not records:
        raise ValueError("no records")
    for i, rec in enumerate(records):
        if not period.contains(rec.test_date):
            raise ValueError(
                f"record {i}: test date {rec.test_date.isoformat()} outside period"
            )
    origin = min(rec.test_date for rec in records)
    n = len(records)
    until_test = np.empty(n)
    until_hosp = np.full(n, np.nan)
    pos_to_hosp = np.full(n, np.nan)
    violations: list[tuple[int, str]] = []
    for i, rec in enumerate(records):
        test_days = float((rec.test_date - origin).days)
        until_test[i] = test_days
        if rec.hosp_date is None:
            continue
        gap = (rec.test_date - rec.hosp_date).days
        if gap > PRE_POSITIVE_WINDOW_DAYS:
            violations.append(
                (i, f"hospitalisation {gap} days before test exceeds the "
                    f"{PRE_POSITIVE_WINDOW_DAYS}-day window")
            )
            continue
        hosp_days = float((rec.hosp_date - origin).days)
        until_hosp[i] = hosp_days
        pos_to_hosp[i] = hosp_days - test_days
    return TimeCovariates(until_test, until_hosp, pos_to_hosp, tuple(violations))


def filter_age_over(
    dataset: ObservationalDataset, threshold: float, age_name: str = "age"
) -> ObservationalDataset:
    """Keep rows with age strictly greater than the threshold."""
    age = dataset.covariate(age_name)
    return dataset.subset(np.flatnonzero(age > threshold))


def fit_normalization(
    dataset: ObservationalDataset, names: Sequence[str] | None = None
) -> NormalizationSpec:
    """Scale for each covariate: pooled observed max minus min."""
    names = list(names) if names is not None else list(dataset.schema.names)
    scales: dict[str, float] = {}
    for name in names:
        col = dataset.covariate(name)
        scale = float(col.max() - col.min())
        if scale <= 0:
            raise ValueError(f"constant covariate {name!r} cannot be normalized")
        scales[name] = scale
    return NormalizationSpec(scales)
