"""Abundance-table ingestion, validation and preprocessing.

Counts are laid out samples-by-taxa (n x p).  Covariates are keyed on the
same sample IDs and carry one designated group column.
"""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

REFERENCE_NAME = "__reference__"


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class AbundanceData:
    Z: np.ndarray                # (n, p) int64 counts
    groups: np.ndarray           # (n,) int labels in 1..K
    X: np.ndarray                # (n, T) covariates
    taxon_names: tuple
    sample_ids: tuple = ()
    covariate_names: tuple = ()
    group_labels: tuple = ()     # original label for each of 1..K
    reference_index: int | None = None
    augmented: bool = False

    def __post_init__(self):
        Z = np.asarray(self.Z)
        if Z.ndim != 2:
            raise DataError("count matrix must be two-dimensional")
        if Z.shape[0] != len(self.groups) or Z.shape[0] != self.X.shape[0]:
            raise DataError(
                f"row mismatch: counts {Z.shape[0]}, groups {len(self.groups)}, "
                f"covariates {self.X.shape[0]}"
            )
        if Z.shape[1] != len(self.taxon_names):
            raise DataError("taxon_names length does not match count columns")

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[1]

    @property
    def T(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return int(self.groups.max()) if self.groups.size else 0

    @property
    def L(self) -> np.ndarray:
        return self.Z.sum(axis=1)

    @property
    def n_k(self) -> np.ndarray:
        return np.bincount(self.groups, minlength=self.K + 1)[1:]

    @property
    def Xdag(self) -> np.ndarray:
        return np.column_stack([np.ones(self.n), self.X])


@dataclass
class ScreenReport:
    forced_da: list = field(default_factory=list)
    retained: list = field(default_factory=list)
    dropped: list = field(default_factory=list)

    def status_table(self, taxon_names) -> list[tuple[str, str]]:
        rows = []
        status = {}
        for j in self.forced_da:
            status[j] = "forced_da"
        for j in self.retained:
            status[j] = "retained"
        for j in self.dropped:
            status[j] = "dropped"
        for j in sorted(status):
            rows.append((taxon_names[j], status[j]))
        return rows


def validate(data: AbundanceData) -> AbundanceData:
    """Check the structural invariants; returns ``data`` unchanged."""
    Z = data.Z
    if np.any(Z < 0):
        i, j = np.argwhere(Z < 0)[0]
        raise DataError(f"negative count at row {i}, column {j}")
    g = data.groups
    if g.size and (g.min() < 1):
        raise DataError("group labels must be in 1..K")
    if np.any(data.n_k < 1):
        raise DataError("every group needs at least one sample")
    Xd = data.Xdag
    if np.linalg.matrix_rank(Xd) < Xd.shape[1]:
        raise DataError("design matrix [1 : X] is rank deficient")
    return data


def _read_table(path, transpose=False) -> pd.DataFrame:
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    sep = "," if str(path).lower().endswith(".csv") else "\t"
    df = pd.read_csv(path, sep=sep, index_col=0, dtype=str)
    if transpose:
        df = df.T
    df.index = df.index.astype(str)
    df.columns = df.columns.astype(str)
    if df.index.has_duplicates:
        raise DataError(f"duplicate sample IDs in {path}")
    return df


def _parse_counts(df: pd.DataFrame, path) -> np.ndarray:
    out = np.empty(df.shape, dtype=np.int64)
    for j, col in enumerate(df.columns):
        vals = pd.to_numeric(df[col], errors="coerce")
        bad = vals.isna() | (vals < 0) | (vals != np.floor(vals))
        if bad.any():
            row = df.index[np.argmax(bad.to_numpy())]
            raise DataError(
                f"{path}: invalid count {df.loc[row, col]!r} at sample {row!r}, taxon {col!r}"
            )
        out[:, j] = vals.to_numpy().astype(np.int64)
    return out


def _encode_covariates(df: pd.DataFrame, standardize=True):
    cols, names = [], []
    for name in df.columns:
        raw = df[name]
        num = pd.to_numeric(raw, errors="coerce")
        if num.notna().all():
            v = num.to_numpy(dtype=float)
            levels = np.unique(v)
            if len(levels) <= 2 and set(levels) <= {0.0, 1.0}:
                cols.append(v)
                names.append(name)
            elif len(levels) == 1:
                raise DataError(f"covariate {name!r} is constant")
            else:
                if standardize:
                    v = (v - v.mean()) / v.std()
                cols.append(v)
                names.append(name)
        else:
            if raw.isna().any():
                raise DataError(f"missing values in covariate {name!r}")
            levels = sorted(raw.unique())
            # first level is the baseline: g levels -> g-1 indicator columns
            for lev in levels[1:]:
                cols.append((raw == lev).to_numpy(dtype=float))
                names.append(f"{name}={lev}")
    X = np.column_stack(cols) if cols else np.zeros((len(df), 0))
    return X, tuple(names)


def _group_codes(labels: pd.Series):
    uniq = pd.unique(labels)
    num = pd.to_numeric(pd.Series(uniq), errors="coerce")
    if num.notna().all():
        order = [u for _, u in sorted(zip(num, uniq))]
    else:
        order = sorted(uniq)
    code = {lab: k + 1 for k, lab in enumerate(order)}
    return np.array([code[v] for v in labels], dtype=np.int64), tuple(str(o) for o in order)


def load_abundance(count_path, covariate_path, group_column, transpose=False,
                   standardize=True) -> AbundanceData:
    """Read a count table and a covariate table into validated ``AbundanceData``.

    Rows are aligned on sample ID.  Non-numeric covariates are one-hot encoded
    against their first (sorted) level; continuous covariates are standardized.
    """
    counts = _read_table(count_path, transpose=transpose)
    covs = _read_table(covariate_path)
    if group_column not in covs.columns:
        raise DataError(f"group column {group_column!r} not in {covariate_path}")
    missing = [s for s in counts.index if s not in covs.index]
    if missing:
        raise DataError(f"sample ID {missing[0]!r} in counts has no covariate row")
    covs = covs.loc[counts.index]
    Z = _parse_counts(counts, count_path)
    groups, glabels = _group_codes(covs[group_column])
    X, xnames = _encode_covariates(covs.drop(columns=[group_column]), standardize)
    data = AbundanceData(
        Z=Z, groups=groups, X=X, taxon_names=tuple(counts.columns),
        sample_ids=tuple(counts.index), covariate_names=xnames, group_labels=glabels,
    )
    return validate(data)


def screen_biological_zeros(data: AbundanceData) -> ScreenReport:
    """Flag taxa that vanish from an entire group while present elsewhere."""
    if data.K < 2:
        raise DataError("screening needs at least two groups")
    Z = data.Z
    report = ScreenReport()
    for j in range(data.p):
        if data.reference_index is not None and j == data.reference_index:
            continue
        col = Z[:, j]
        if col.sum() == 0:
            report.dropped.append(j)
            continue
        absent = any(np.all(col[data.groups == k] == 0) for k in range(1, data.K + 1))
        (report.forced_da if absent else report.retained).append(j)
    return report


def filter_rare(data: AbundanceData, max_zero_frac: float) -> list[int]:
    """Indices of non-reference taxa whose zero fraction exceeds ``max_zero_frac``."""
    frac = (data.Z == 0).mean(axis=0)
    return [j for j in np.flatnonzero(frac > max_zero_frac) if j != data.reference_index]


def subset_taxa(data: AbundanceData, keep) -> AbundanceData:
    keep = list(keep)
    ref = data.reference_index
    new_ref = keep.index(ref) if ref is not None and ref in keep else None
    return replace(
        data, Z=data.Z[:, keep], taxon_names=tuple(data.taxon_names[j] for j in keep),
        reference_index=new_ref,
    )


def augment_reference(data: AbundanceData) -> AbundanceData:
    """Prepend an artificial reference taxon with unit count in every sample."""
    if data.augmented:
        raise DataError("data already carries an artificial reference taxon")
    if data.p == 0:
        raise DataError("cannot augment an empty count matrix")
    Z = np.column_stack([np.ones(data.n, dtype=np.int64), data.Z])
    return replace(data, Z=Z, taxon_names=(REFERENCE_NAME,) + tuple(data.taxon_names),
                   reference_index=0, augmented=True)


def select_reference_min_variance(data: AbundanceData) -> int:
    """Index of the taxon whose relative abundances have the smallest variance.

    Ties go to the lowest index.
    """
    if data.p < 1:
        raise DataError("no taxa")
    L = data.L
    if np.any(L <= 0):
        raise DataError("all sampling depths must be positive")
    rel = data.Z / L[:, None]
    var = rel.var(axis=0)
    return int(np.argmin(var))


def move_to_front(data: AbundanceData, j: int) -> AbundanceData:
    order = [j] + [k for k in range(data.p) if k != j]
    out = subset_taxa(replace(data, reference_index=None), order)
    return replace(out, reference_index=0)


def write_screen_report(report: ScreenReport, taxon_names, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["taxon", "status"])
        for row in report.status_table(taxon_names):
            w.writerow(row)


def write_counts(path, Z, sample_ids, taxon_names):
    df = pd.DataFrame(np.asarray(Z), index=list(sample_ids), columns=list(taxon_names))
    df.index.name = "sample"
    sep = "," if str(path).lower().endswith(".csv") else "\t"
    df.to_csv(path, sep=sep, lineterminator="\n")


def write_covariates(path, X, groups, sample_ids, covariate_names, group_column="group"):
    df = pd.DataFrame(np.asarray(X), index=list(sample_ids), columns=list(covariate_names))
    df[group_column] = np.asarray(groups)
    df.index.name = "sample"
    sep = "," if str(path).lower().endswith(".csv") else "\t"
    df.to_csv(path, sep=sep, lineterminator="\n", float_format="%.17g")
