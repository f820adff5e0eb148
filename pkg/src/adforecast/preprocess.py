"""Patient filters, forward-fill imputation, feature selection, z-normalization
and assembly of the supervised 4-horizon dataset.

The pipeline order is: minimum-visit filter, required-month filter,
missingness filter, forward-fill, feature selection, normalization, supervised
assembly. Each filter is a pure per-patient predicate on the raw data, so
filters commute on patient membership.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .cohort import Cohort, FeatureGroup, VisitRecord, WINDOW_MONTHS
from .validation import check_in_unit_interval

HORIZONS = (6, 12, 18, 24)


@dataclass
class FilterReport:
    stage: str
    n_before: int
    n_after: int
    removed: list[tuple[str, str]] = field(default_factory=list)  # (patient, reason)

    @property
    def n_removed(self):
        return self.n_before - self.n_after

    def rows(self):
        return [(pid, reason) for pid, reason in self.removed]


@dataclass
class FillReport:
    n_filled_cells: int
    unfilled: list[tuple[str, str]]  # (patient, column) never observed


def filter_min_visits(cohort: Cohort, min_visits: int = 4):
    """Keep patients with at least ``min_visits`` recorded visits."""
    if min_visits < 1:
        raise ValueError(f"min_visits must be >= 1, got {min_visits}")
    keep, removed = [], []
    for pid, visits in cohort.patients.items():
        if len(visits) >= min_visits:
            keep.append(pid)
        else:
            removed.append((pid, f"{len(visits)} visits < {min_visits}"))
    report = FilterReport("min_visits", cohort.n_patients, len(keep), removed)
    return cohort.with_patients(keep), report


def filter_required_months(cohort: Cohort, required=WINDOW_MONTHS, tolerance=0):
    """Keep patients whose visit history covers every month in ``required``."""
    keep, removed = [], []
    for pid, visits in cohort.patients.items():
        months = [v.month for v in visits]
        absent = [m for m in required
                  if not any(abs(x - m) <= tolerance for x in months)]
        if absent:
            removed.append((pid, "missing months " + ",".join(map(str, absent))))
        else:
            keep.append(pid)
    report = FilterReport("required_months", cohort.n_patients, len(keep), removed)
    return cohort.with_patients(keep), report


def filter_missingness(cohort: Cohort, max_missing_fraction: float = 0.90):
    """Drop patients whose masked-cell fraction exceeds ``max_missing_fraction``."""
    f = check_in_unit_interval(max_missing_fraction, "max_missing_fraction",
                               open_left=True)
    keep, removed = [], []
    for pid, visits in cohort.patients.items():
        cells = sum(v.missing.size for v in visits)
        masked = sum(int(v.missing.sum()) for v in visits)
        frac = masked / cells if cells else 0.0
        if frac > f:
            removed.append((pid, f"{frac:.4f} missing > {f}"))
        else:
            keep.append(pid)
    report = FilterReport("missingness", cohort.n_patients, len(keep), removed)
    return cohort.with_patients(keep), report


def _fill_series(values, mask):
    """Forward-fill a 2-D (visits x columns) block; leading gaps back-fill.

    Returns (filled values, still-missing mask). Unmasked cells are never
    altered; columns with no observation at all stay masked.
    """
    t, d = values.shape
    idx = np.where(~mask, np.arange(t)[:, None], -1)
    last = np.maximum.accumulate(idx, axis=0)              # last observed row
    rev = np.where(~mask[::-1], np.arange(t)[::-1][:, None], t)
    nxt = np.minimum.accumulate(rev, axis=0)[::-1]         # next observed row
    src = np.where(last >= 0, last, np.where(nxt < t, nxt, 0))
    filled = np.take_along_axis(values, src, axis=0)
    still = (last < 0) & (nxt >= t)
    return np.where(still, values, filled), mask & still


def forward_fill(cohort: Cohort):
    """Impute masked cells per patient and column from the most recent earlier
    observation (leading gaps use the first later one); the ADAS-Cog13 and CS
    fields are filled with the same rule. Idempotent."""
    patients = {}
    filled_cells = 0
    unfilled = []
    for pid, visits in cohort.patients.items():
        values = np.stack([v.features for v in visits])
        mask = np.stack([v.missing for v in visits])
        new_values, new_mask = _fill_series(values, mask)
        filled_cells += int(mask.sum() - new_mask.sum())
        for j in np.flatnonzero(new_mask.all(axis=0)):
            unfilled.append((pid, cohort.feature_names[j]))

        adas = np.array([np.nan if v.adas13 is None else v.adas13
                         for v in visits])[:, None]
        adas, adas_mask = _fill_series(adas, np.isnan(adas))
        cs = np.array([np.nan if v.cs is None else float(v.cs)
                       for v in visits])[:, None]
        cs, cs_mask = _fill_series(cs, np.isnan(cs))
        if adas_mask.any():
            unfilled.append((pid, "<adas13>"))
        if cs_mask.any():
            unfilled.append((pid, "<cs>"))

        patients[pid] = [
            VisitRecord(pid, v.month, new_values[i], new_mask[i],
                        None if adas_mask[i, 0] else float(adas[i, 0]),
                        None if cs_mask[i, 0] else int(cs[i, 0]))
            for i, v in enumerate(visits)
        ]
    new = Cohort(patients, list(cohort.feature_names), dict(cohort.feature_groups))
    return new, FillReport(filled_cells, unfilled)


def select_features(cohort: Cohort, group_patterns):
    """Restrict the cohort to the configured feature columns.

    ``group_patterns`` maps a feature group (name or :class:`FeatureGroup`)
    to a list of column names or ``fnmatch`` patterns, matched against the
    columns assigned to that group. A name or pattern that matches nothing is
    an error; so is an empty selection.
    """
    if not group_patterns:
        raise ValueError("no features selected: empty group configuration")
    by_group: dict[FeatureGroup, list[str]] = {}
    for name in cohort.feature_names:
        by_group.setdefault(cohort.feature_groups[name], []).append(name)

    selected = set()
    for group, patterns in group_patterns.items():
        group = FeatureGroup(group)
        pool = by_group.get(group, [])
        for pat in patterns:
            if pat in pool:
                selected.add(pat)
                continue
            hits = fnmatch.filter(pool, pat)
            if not hits:
                raise ValueError(
                    f"feature selection: {pat!r} (group {group.value}) matches "
                    f"no cohort column")
            selected.update(hits)
    if not selected:
        raise ValueError("no features selected")

    keep_idx = [i for i, n in enumerate(cohort.feature_names) if n in selected]
    names = [cohort.feature_names[i] for i in keep_idx]
    idx = np.array(keep_idx, dtype=int)
    patients = {
        pid: [VisitRecord(pid, v.month, v.features[idx], v.missing[idx],
                          v.adas13, v.cs) for v in visits]
        for pid, visits in cohort.patients.items()
    }
    groups = {n: cohort.feature_groups[n] for n in names}
    return Cohort(patients, names, groups)


class ZNormalizer(BaseEstimator, TransformerMixin):
    """Column-wise z-normalization with sample (N-1) standard deviation.

    Statistics are learned on the rows passed to :meth:`fit` only. Constant
    columns map to all-zeros and are flagged in ``constant_columns_``. NaN
    cells (still-masked after forward-fill) are ignored when fitting and
    imputed with 0 after scaling, i.e. with the fitted column mean.
    """

    def __init__(self, ddof=1):
        self.ddof = ddof

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("fit requires a non-empty 2-D array")
        observed = ~np.isnan(X)
        n_obs = observed.sum(axis=0)
        safe = np.where(observed, X, 0.0)
        mean = safe.sum(axis=0) / np.maximum(n_obs, 1)
        ss = np.where(observed, (safe - mean) ** 2, 0.0).sum(axis=0)
        dof = np.maximum(n_obs - self.ddof, 0)
        sd = np.sqrt(np.where(dof > 0, ss / np.maximum(dof, 1), 0.0))
        self.mean_ = np.where(n_obs == 0, 0.0, mean)
        self.constant_columns_ = (sd == 0.0) | (n_obs == 0)
        self.scale_ = np.where(self.constant_columns_, 1.0, sd)
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        Z = (X - self.mean_) / self.scale_
        Z[:, self.constant_columns_] = 0.0
        return np.where(np.isnan(Z), 0.0, Z)


def z_normalize(X, fit_rows=None):
    """Normalize ``X`` column-wise using statistics from ``fit_rows`` only.

    Returns ``(X_normalized, normalizer)``; the fitted normalizer carries
    ``mean_``, ``scale_`` and the ``constant_columns_`` flags.
    """
    X = np.asarray(X, dtype=np.float64)
    rows = np.arange(X.shape[0]) if fit_rows is None else np.asarray(fit_rows)
    if rows.size == 0:
        raise ValueError("fit_rows must be non-empty")
    norm = ZNormalizer().fit(X[rows])
    return norm.transform(X), norm


@dataclass
class SupervisedSet:
    """One row per (patient, anchor visit) with all four future scores known."""
    X: np.ndarray                    # (N, D); NaN marks never-observed cells
    y: np.ndarray                    # (N, 4) ADAS-Cog13 at t+6, +12, +18, +24
    patient_of_row: list[str]
    anchor_months: np.ndarray        # (N,) int
    feature_names: list[str]
    horizons: tuple[int, ...] = HORIZONS
    normalizer: ZNormalizer | None = None
    zero_row_patients: list[str] = field(default_factory=list)

    @property
    def n_rows(self):
        return self.X.shape[0]

    def rows_of(self, patient_id):
        return [i for i, p in enumerate(self.patient_of_row) if p == patient_id]

    def restrict(self, rows):
        rows = np.asarray(rows, dtype=int)
        return SupervisedSet(self.X[rows], self.y[rows],
                             [self.patient_of_row[i] for i in rows],
                             self.anchor_months[rows], self.feature_names,
                             self.horizons, self.normalizer, [])


def build_supervised(cohort: Cohort, horizons=HORIZONS) -> SupervisedSet:
    """Assemble the supervised set: inputs are the features at visit ``t``,
    targets the ADAS-Cog13 scores at ``t+6..t+24`` months. Visits lacking any
    horizon target contribute no row; patients contributing none are recorded.
    """
    xs, ys, pids, anchors = [], [], [], []
    zero_rows = []
    for pid, visits in cohort.patients.items():
        by_month = {v.month: v for v in visits}
        n_before = len(xs)
        for v in visits:
            targets = []
            for h in horizons:
                fut = by_month.get(v.month + h)
                if fut is None or fut.adas13 is None:
                    break
                targets.append(fut.adas13)
            if len(targets) != len(horizons):
                continue
            row = v.features.astype(np.float64).copy()
            row[v.missing] = np.nan
            xs.append(row)
            ys.append(targets)
            pids.append(pid)
            anchors.append(v.month)
        if len(xs) == n_before:
            zero_rows.append(pid)
    d = cohort.n_features
    X = np.array(xs, dtype=np.float64).reshape(len(xs), d)
    y = np.array(ys, dtype=np.float64).reshape(len(xs), len(horizons))
    return SupervisedSet(X, y, pids, np.array(anchors, dtype=int),
                         list(cohort.feature_names), tuple(horizons),
                         None, zero_rows)
