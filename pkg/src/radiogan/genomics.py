"""Gene-expression table ingestion, cleaning, and per-gene normalization.

Tables are plain UTF-8 CSV: header row is ``subject_id`` followed by gene
names, then one row per subject. Missing values are an empty cell or the
literal ``NaN`` (any case).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SCALE_FLOOR = 1e-8
SCHEMES = ("zscore", "log1p-zscore", "minmax")

_MISSING = {"", "nan"}


class GeneTableError(ValueError):
    """Schema-level problem: bad header, duplicate genes, wrong dimensions."""


class GeneTableParseError(GeneTableError):
    """Unparseable file content, carries the 1-based line number."""

    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class GeneVector:
    """Fixed-length, fully observed expression vector for one subject."""

    values: np.ndarray
    subject_id: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise GeneTableError(f"gene vector must be 1-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise GeneTableError(f"gene vector for {self.subject_id!r} has non-finite entries")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class GeneTable:
    """Expression matrix: rows = subjects, columns = genes, NaN = missing."""

    subject_ids: list[str]
    gene_names: list[str]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        expected = (len(self.subject_ids), len(self.gene_names))
        if values.shape != expected:
            raise GeneTableError(f"value matrix shape {values.shape} != {expected}")
        seen = set()
        for name in self.gene_names:
            if name in seen:
                raise GeneTableError(f"duplicate gene name: {name!r}")
            seen.add(name)
        object.__setattr__(self, "values", values)

    @property
    def n_subjects(self):
        return len(self.subject_ids)

    @property
    def n_genes(self):
        return len(self.gene_names)

    def row(self, subject_id: str) -> GeneVector:
        """Vector for the first row carrying ``subject_id``."""
        try:
            i = self.subject_ids.index(subject_id)
        except ValueError:
            raise KeyError(f"subject {subject_id!r} not in table") from None
        return GeneVector(self.values[i].copy(), subject_id)


def load_gene_table(path) -> GeneTable:
    """Parse a gene CSV into a :class:`GeneTable`, keeping missing cells as NaN."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise GeneTableParseError(1, "empty file") from None
        if not header or header[0] != "subject_id":
            raise GeneTableParseError(1, "header must start with 'subject_id'")
        gene_names = [name.strip() for name in header[1:]]

        subject_ids = []
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise GeneTableParseError(
                    line_no, f"expected {len(header)} fields, got {len(row)}"
                )
            subject_ids.append(row[0].strip())
            rows.append([_parse_cell(cell, line_no) for cell in row[1:]])

    values = np.asarray(rows, dtype=np.float64).reshape(len(subject_ids), len(gene_names))
    return GeneTable(subject_ids, gene_names, values)


def _parse_cell(cell, line_no):
    text = cell.strip()
    if text.lower() in _MISSING:
        return np.nan
    try:
        return float(text)
    except ValueError:
        raise GeneTableParseError(line_no, f"cannot parse {cell!r} as a number") from None


def save_gene_table(table: GeneTable, path) -> Path:
    """Write ``table`` back out in the same CSV layout ``load_gene_table`` reads."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", *table.gene_names])
        for sid, row in zip(table.subject_ids, table.values):
            writer.writerow([sid] + [_format_cell(v) for v in row])
    return path


def _format_cell(v):
    return "NaN" if np.isnan(v) else repr(float(v))


def clean_genes(table: GeneTable) -> GeneTable:
    """Drop every gene column that contains at least one missing value."""
    if table.n_genes == 0:
        return table
    keep = ~np.isnan(table.values).any(axis=0)
    if not keep.any():
        raise GeneTableError("all gene columns contain missing values")
    names = [n for n, k in zip(table.gene_names, keep) if k]
    return GeneTable(list(table.subject_ids), names, table.values[:, keep].copy())


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-gene (location, scale) pairs for one normalization scheme."""

    scheme: str
    location: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise GeneTableError(f"unknown scheme {self.scheme!r}, expected one of {SCHEMES}")
        location = np.asarray(self.location, dtype=np.float64)
        scale = np.asarray(self.scale, dtype=np.float64)
        if location.shape != scale.shape or location.ndim != 1:
            raise GeneTableError("location/scale must be 1-D arrays of equal length")
        if np.any(scale <= 0):
            raise GeneTableError("scale entries must be positive")
        object.__setattr__(self, "location", location)
        object.__setattr__(self, "scale", scale)

    @property
    def n_genes(self):
        return self.location.shape[0]


def fit_normalizer(table: GeneTable, scheme: str = "log1p-zscore") -> NormalizationSpec:
    """Fit per-gene statistics on a cleaned table.

    Constant genes get their scale floored at ``SCALE_FLOOR`` so application
    maps them to the location (zero for zscore schemes).
    """
    if np.isnan(table.values).any():
        raise GeneTableError("table has missing values, run clean_genes first")
    x = _pre_transform(table.values, scheme)
    if scheme == "minmax":
        location = x.min(axis=0)
        scale = x.max(axis=0) - location
    else:
        location = x.mean(axis=0)
        scale = x.std(axis=0)
    scale = np.maximum(scale, SCALE_FLOOR)
    return NormalizationSpec(scheme, location, scale)


def _pre_transform(values, scheme):
    if scheme == "log1p-zscore":
        if np.any(values <= -1.0):
            raise GeneTableError("log1p-zscore needs all values > -1")
        return np.log1p(values)
    if scheme in ("zscore", "minmax"):
        return values
    raise GeneTableError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")


def apply_normalizer(spec: NormalizationSpec, vector):
    """Normalize one vector; accepts a GeneVector or bare array and returns the same kind."""
    if isinstance(vector, GeneVector):
        return GeneVector(apply_normalizer(spec, vector.values), vector.subject_id)
    values = np.asarray(vector, dtype=np.float64)
    if values.shape != (spec.n_genes,):
        raise GeneTableError(
            f"vector length {values.shape} does not match spec length ({spec.n_genes},)"
        )
    return (_pre_transform(values[None, :], spec.scheme)[0] - spec.location) / spec.scale


def normalize_table(spec: NormalizationSpec, table: GeneTable) -> GeneTable:
    """Apply ``spec`` to every row of ``table``."""
    if table.n_genes != spec.n_genes:
        raise GeneTableError(f"table has {table.n_genes} genes, spec expects {spec.n_genes}")
    values = (_pre_transform(table.values, spec.scheme) - spec.location) / spec.scale
    return GeneTable(list(table.subject_ids), list(table.gene_names), values)
