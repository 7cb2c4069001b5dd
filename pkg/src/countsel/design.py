"""Data ingestion and design-matrix construction.

Turns a table of raw covariates into the fully expanded model matrix:
numeric columns pass through, categoricals become k-1 dummies against the
lexicographically smallest level, and every pair of distinct raw covariates
contributes the elementwise products of their main-effect columns.  Columns
are centered and scaled to population standard deviation one, and the
scaling statistics are kept so held-out rows can be encoded later with
training statistics only.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"

_KINDS = (NUMERIC, CATEGORICAL)


class DataError(ValueError):
    """Raised when a CSV file or constructed dataset violates the schema."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Covariate:
    """A single raw covariate: float values or string level labels."""

    name: str
    kind: str
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise DataError(f"unknown covariate kind {self.kind!r} for {self.name!r}")
        if self.kind == NUMERIC:
            vals = np.asarray(self.values, dtype=np.float64)
        else:
            vals = np.asarray(self.values, dtype=object)
        object.__setattr__(self, "values", _readonly(vals))


@dataclass(frozen=True)
class Dataset:
    """Raw rows: a count response plus covariates, optionally group labels."""

    response: np.ndarray
    covariates: tuple[Covariate, ...]
    group_labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        y = np.asarray(self.response, dtype=np.int64)
        object.__setattr__(self, "response", _readonly(y))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.group_labels is not None:
            g = np.asarray(self.group_labels, dtype=object)
            object.__setattr__(self, "group_labels", _readonly(g))

    @property
    def n(self) -> int:
        return int(self.response.shape[0])

    def covariate(self, name: str) -> Covariate:
        for cov in self.covariates:
            if cov.name == name:
                return cov
        raise KeyError(name)

    def subset(self, rows: np.ndarray | Sequence[int]) -> "Dataset":
        """Row subset in the given order.

        Skips schema revalidation on purpose: a fold may see a single level
        of a categorical, which simply encodes to no dummy columns.
        """
        rows = np.asarray(rows, dtype=np.intp)
        covs = tuple(
            Covariate(c.name, c.kind, c.values[rows]) for c in self.covariates
        )
        groups = None if self.group_labels is None else self.group_labels[rows]
        return Dataset(self.response[rows], covs, groups)


def validate_dataset(dataset: Dataset) -> None:
    """Check invariants that loaders and generators must guarantee.

    Lengths agree, the response is a non-negative integer vector, covariate
    names are unique, and every categorical shows at least two levels.
    """
    n = dataset.n
    if n == 0:
        raise DataError("dataset has no rows")
    names = [c.name for c in dataset.covariates]
    if len(names) != len(set(names)):
        raise DataError("duplicate covariate names")
    if not dataset.covariates:
        raise DataError("dataset has no covariates")
    if np.any(dataset.response < 0):
        raise DataError("response contains negative counts")
    for cov in dataset.covariates:
        if cov.values.shape[0] != n:
            raise DataError(f"covariate {cov.name!r} length differs from response")
        if cov.kind == NUMERIC and not np.all(np.isfinite(cov.values)):
            raise DataError(f"covariate {cov.name!r} has non-finite values")
        if cov.kind == CATEGORICAL and len(set(cov.values.tolist())) < 2:
            raise DataError(f"categorical {cov.name!r} has fewer than two levels")
    if dataset.group_labels is not None and dataset.group_labels.shape[0] != n:
        raise DataError("group label length differs from response")


@dataclass(frozen=True)
class CovariateEncoder:
    """Training-time encoding state for one raw covariate."""

    name: str
    kind: str
    levels: tuple[str, ...] | None  # sorted, levels[0] is the reference


@dataclass(frozen=True)
class MainEffect:
    """One unstandardized main-effect column (numeric or dummy)."""

    name: str
    source: str
    level: str | None
    values: np.ndarray


@dataclass(frozen=True)
class ColumnProvenance:
    """Where a design column came from: source covariates and dummy levels."""

    column_name: str
    sources: tuple[str, ...]
    levels: tuple[tuple[str, str], ...]
    is_interaction: bool


@dataclass(frozen=True)
class ExpandedMatrix:
    """Unstandardized design: main effects followed by pairwise interactions."""

    matrix: np.ndarray
    columns: tuple[ColumnProvenance, ...]


@dataclass(frozen=True)
class DesignMatrix:
    """Standardized design with everything needed to encode new rows."""

    matrix: np.ndarray
    columns: tuple[ColumnProvenance, ...]
    means: np.ndarray
    sds: np.ndarray
    dropped: tuple[str, ...]
    encoders: tuple[CovariateEncoder, ...]

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.column_name for c in self.columns)


def encoders_for(dataset: Dataset) -> tuple[CovariateEncoder, ...]:
    encs = []
    for cov in dataset.covariates:
        if cov.kind == NUMERIC:
            encs.append(CovariateEncoder(cov.name, NUMERIC, None))
        else:
            levels = tuple(sorted(set(cov.values.tolist())))
            encs.append(CovariateEncoder(cov.name, CATEGORICAL, levels))
    return tuple(encs)


def _effects_from_encoders(
    encoders: Sequence[CovariateEncoder], dataset: Dataset
) -> list[MainEffect]:
    effects: list[MainEffect] = []
    for enc in encoders:
        cov = dataset.covariate(enc.name)
        if enc.kind == NUMERIC:
            effects.append(
                MainEffect(enc.name, enc.name, None, np.asarray(cov.values, dtype=np.float64))
            )
        else:
            assert enc.levels is not None
            for level in enc.levels[1:]:
                vals = (cov.values == level).astype(np.float64)
                effects.append(MainEffect(f"{enc.name}={level}", enc.name, level, vals))
    return effects


def encode_main_effects(dataset: Dataset) -> list[MainEffect]:
    """Numeric pass-through plus k-1 dummies per categorical.

    Dummies are built against the lexicographically smallest level, in
    sorted level order, so the column layout is a pure function of the data.
    """
    return _effects_from_encoders(encoders_for(dataset), dataset)


def expand_interactions(effects: Sequence[MainEffect]) -> ExpandedMatrix:
    """Append products of main-effect columns from distinct raw covariates.

    Ordering is deterministic: all main effects first, then for each source
    pair (in first-appearance order) the cross products of their columns.
    Self-interactions, squares included, are never formed.
    """
    cols: list[np.ndarray] = []
    prov: list[ColumnProvenance] = []
    for eff in effects:
        levels = ((eff.source, eff.level),) if eff.level is not None else ()
        cols.append(eff.values)
        prov.append(ColumnProvenance(eff.name, (eff.source,), levels, False))

    sources: list[str] = []
    for eff in effects:
        if eff.source not in sources:
            sources.append(eff.source)
    by_source = {s: [e for e in effects if e.source == s] for s in sources}

    for i, si in enumerate(sources):
        for sj in sources[i + 1 :]:
            for ei in by_source[si]:
                for ej in by_source[sj]:
                    name = f"{ei.name}:{ej.name}"
                    levels = tuple(
                        (e.source, e.level) for e in (ei, ej) if e.level is not None
                    )
                    cols.append(ei.values * ej.values)
                    prov.append(ColumnProvenance(name, (si, sj), levels, True))

    n = effects[0].values.shape[0] if effects else 0
    matrix = (
        np.column_stack(cols) if cols else np.empty((n, 0), dtype=np.float64)
    )
    return ExpandedMatrix(_readonly(matrix), tuple(prov))


def standardize(
    expanded: ExpandedMatrix, encoders: tuple[CovariateEncoder, ...]
) -> DesignMatrix:
    """Center and scale every column to population sd 1.

    Zero-variance columns are dropped and recorded by name.  The returned
    scaling statistics refer to the retained columns only.
    """
    mat = expanded.matrix
    means = mat.mean(axis=0) if mat.size else np.zeros(mat.shape[1])
    sds = mat.std(axis=0) if mat.size else np.zeros(mat.shape[1])
    keep = sds > 0.0
    dropped = tuple(
        c.column_name for c, k in zip(expanded.columns, keep) if not k
    )
    kept_cols = tuple(c for c, k in zip(expanded.columns, keep) if k)
    means = means[keep]
    sds = sds[keep]
    scaled = (mat[:, keep] - means) / sds
    return DesignMatrix(
        matrix=_readonly(scaled),
        columns=kept_cols,
        means=_readonly(means),
        sds=_readonly(sds),
        dropped=dropped,
        encoders=encoders,
    )


def build_design(dataset: Dataset) -> DesignMatrix:
    """Full pipeline: encode, expand pairwise interactions, standardize."""
    encoders = encoders_for(dataset)
    effects = _effects_from_encoders(encoders, dataset)
    return standardize(expand_interactions(effects), encoders)


def apply_scaling(design: DesignMatrix, rows: Dataset) -> np.ndarray:
    """Encode new rows with training levels and training scaling statistics.

    A level unseen at training time contributes all-zero dummies.  Columns
    dropped at training time are dropped here too, so the result aligns
    with ``design.matrix`` column for column.
    """
    effects = _effects_from_encoders(design.encoders, rows)
    expanded = expand_interactions(effects)
    index = {c.column_name: j for j, c in enumerate(expanded.columns)}
    out = np.empty((rows.n, len(design.columns)), dtype=np.float64)
    for j, col in enumerate(design.columns):
        raw = expanded.matrix[:, index[col.column_name]]
        out[:, j] = (raw - design.means[j]) / design.sds[j]
    return out


# ---------------------------------------------------------------------------
# CSV input and output


@dataclass(frozen=True)
class Schema:
    """Declares how to read a CSV: response column, covariate kinds, group."""

    response: str
    covariates: tuple[tuple[str, str], ...]
    group: str | None = None

    def __post_init__(self) -> None:
        names = [n for n, _ in self.covariates]
        if len(names) != len(set(names)):
            raise DataError("duplicate covariate names in schema")
        if self.response in names:
            raise DataError("response column also declared as a covariate")
        for name, kind in self.covariates:
            if kind not in _KINDS:
                raise DataError(f"unknown kind {kind!r} for covariate {name!r}")

    @classmethod
    def from_mapping(
        cls, response: str, covariates: Mapping[str, str], group: str | None = None
    ) -> "Schema":
        return cls(response, tuple(covariates.items()), group)


def _parse_count(text: str, row: int, column: str) -> int:
    try:
        value = int(text.strip())
    except ValueError:
        raise DataError(
            f"row {row}: response column {column!r} has non-integer value {text!r}"
        ) from None
    if value < 0:
        raise DataError(f"row {row}: response column {column!r} is negative ({value})")
    return value


def _parse_numeric(text: str, row: int, column: str) -> float:
    stripped = text.strip()
    if not stripped:
        raise DataError(f"row {row}: missing value in numeric column {column!r}")
    try:
        value = float(stripped)
    except ValueError:
        raise DataError(
            f"row {row}: non-numeric value {text!r} in column {column!r}"
        ) from None
    if not math.isfinite(value):
        raise DataError(f"row {row}: non-finite value in numeric column {column!r}")
    return value


def load_csv(path: str, schema: Schema) -> Dataset:
    """Read an RFC-4180 CSV with a header row into a validated Dataset.

    Errors name the offending row (1-based, excluding the header) and
    column; missing cells, ragged rows, and absent columns are rejected.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        raw_rows = list(reader)

    positions: dict[str, int] = {}
    for i, name in enumerate(header):
        positions.setdefault(name, i)
    wanted = [schema.response] + [n for n, _ in schema.covariates]
    if schema.group is not None:
        wanted.append(schema.group)
    for name in wanted:
        if name not in positions:
            raise DataError(f"{path}: column {name!r} not found in header")

    y: list[int] = []
    cov_values: dict[str, list] = {n: [] for n, _ in schema.covariates}
    groups: list[str] = []
    for r, row in enumerate(raw_rows, start=1):
        if len(row) != len(header):
            raise DataError(
                f"{path}: row {r} has {len(row)} fields, header has {len(header)}"
            )
        y.append(_parse_count(row[positions[schema.response]], r, schema.response))
        for name, kind in schema.covariates:
            cell = row[positions[name]]
            if kind == NUMERIC:
                cov_values[name].append(_parse_numeric(cell, r, name))
            else:
                if not cell.strip():
                    raise DataError(
                        f"{path}: row {r}: missing value in categorical column {name!r}"
                    )
                cov_values[name].append(cell)
        if schema.group is not None:
            cell = row[positions[schema.group]]
            if not cell.strip():
                raise DataError(
                    f"{path}: row {r}: missing value in group column {schema.group!r}"
                )
            groups.append(cell)

    covariates = tuple(
        Covariate(name, kind, np.asarray(cov_values[name], dtype=object if kind == CATEGORICAL else np.float64))
        for name, kind in schema.covariates
    )
    dataset = Dataset(
        response=np.asarray(y, dtype=np.int64),
        covariates=covariates,
        group_labels=np.asarray(groups, dtype=object) if schema.group is not None else None,
    )
    validate_dataset(dataset)
    return dataset


def save_csv(
    dataset: Dataset,
    path: str,
    *,
    response_name: str = "count",
    group_name: str = "group",
) -> None:
    """Write the dataset so load_csv round-trips it exactly.

    Floats are written with repr, which parses back to the identical value.
    """
    header = [response_name] + [c.name for c in dataset.covariates]
    if dataset.group_labels is not None:
        header.append(group_name)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            row: list[str] = [str(int(dataset.response[i]))]
            for cov in dataset.covariates:
                if cov.kind == NUMERIC:
                    row.append(repr(float(cov.values[i])))
                else:
                    row.append(str(cov.values[i]))
            if dataset.group_labels is not None:
                row.append(str(dataset.group_labels[i]))
            writer.writerow(row)
