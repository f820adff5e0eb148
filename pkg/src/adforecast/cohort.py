"""Longitudinal patient records: data model, CSV ingestion, visit-grid alignment
and 24-month conversion labelling.

A cohort is an ordered collection of patients, each an ordered list of visits.
Every visit carries a feature vector together with a boolean missing-mask; a
masked cell must never be read as a number downstream. Missing values arrive
in the source files as sentinel codes (configurable, ``-999999`` and
``-9999999`` by default) or as empty cells.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum

import numpy as np

WINDOW_MONTHS = (0, 6, 12, 18, 24)
DEFAULT_SENTINELS = (-999999.0, -9999999.0)
ADAS_RANGE = (0.0, 85.0)


class ClinicalStatus(IntEnum):
    CN = 1
    MCI = 2
    AD = 3


class FeatureGroup(str, Enum):
    COGNITIVE = "Cognitive"
    MRI = "MRI"
    DTI = "DTI"
    GENETICS = "Genetics"
    DEMOGRAPHICS = "Demographics"
    CSF = "CSF"
    OTHER = "Other"


class CohortFormatError(ValueError):
    """Raised when a cohort file violates the expected format."""


class AlignmentError(ValueError):
    """Raised when a patient lacks a visit required by the 5-slot grid."""


@dataclass
class VisitRecord:
    patient_id: str
    month: int
    features: np.ndarray          # float64, shape (D,); masked cells are undefined
    missing: np.ndarray           # bool, shape (D,)
    adas13: float | None = None
    cs: int | None = None

    def copy(self):
        return VisitRecord(self.patient_id, self.month, self.features.copy(),
                           self.missing.copy(), self.adas13, self.cs)


@dataclass
class Cohort:
    patients: dict[str, list[VisitRecord]]
    feature_names: list[str]
    feature_groups: dict[str, FeatureGroup]

    @property
    def n_patients(self):
        return len(self.patients)

    @property
    def n_features(self):
        return len(self.feature_names)

    def patient_ids(self):
        return list(self.patients)

    def n_visits(self):
        return sum(len(v) for v in self.patients.values())

    def validate(self):
        """Check the structural invariants; raise ValueError on violation."""
        d = self.n_features
        if set(self.feature_groups) != set(self.feature_names):
            raise ValueError("feature_groups must cover exactly feature_names")
        for pid, visits in self.patients.items():
            months = [v.month for v in visits]
            if any(b <= a for a, b in zip(months, months[1:])):
                raise ValueError(f"patient {pid}: months not strictly increasing")
            for v in visits:
                if v.patient_id != pid:
                    raise ValueError(f"visit under {pid} carries id {v.patient_id}")
                if v.month < 0:
                    raise ValueError(f"patient {pid}: negative month {v.month}")
                if v.features.shape != (d,) or v.missing.shape != (d,):
                    raise ValueError(f"patient {pid} month {v.month}: feature "
                                     f"vector length != {d}")
                if v.cs is not None and v.cs not in (1, 2, 3):
                    raise ValueError(f"patient {pid} month {v.month}: CS {v.cs}")
        return self

    def with_patients(self, keep_ids):
        """New cohort restricted to ``keep_ids`` (order preserved)."""
        keep = set(keep_ids)
        return Cohort({pid: visits for pid, visits in self.patients.items()
                       if pid in keep},
                      list(self.feature_names), dict(self.feature_groups))

    def equals(self, other):
        """Deep equality, masks included; masked cells compare as equal."""
        if (self.feature_names != other.feature_names
                or self.feature_groups != other.feature_groups
                or list(self.patients) != list(other.patients)):
            return False
        for pid in self.patients:
            a, b = self.patients[pid], other.patients[pid]
            if len(a) != len(b):
                return False
            for va, vb in zip(a, b):
                if (va.month != vb.month or va.adas13 != vb.adas13
                        or va.cs != vb.cs
                        or not np.array_equal(va.missing, vb.missing)):
                    return False
                ok = ~va.missing
                if not np.array_equal(va.features[ok], vb.features[ok]):
                    return False
        return True


@dataclass(frozen=True)
class ConversionLabel:
    """Which of the four 6-month windows, if any, sees the first move to AD."""
    per_window: tuple[bool, bool, bool, bool]
    converted: bool
    first_window: int | None       # 1..4
    baseline_excluded: bool        # baseline CS already AD


@dataclass
class CohortSchema:
    """Column mapping for delimited cohort files."""
    id_column: str
    month_column: str
    adas13_column: str
    cs_column: str
    feature_groups: dict[str, FeatureGroup] = field(default_factory=dict)
    missing_sentinels: tuple[float, ...] = DEFAULT_SENTINELS
    month_tolerance: int = 0

    @property
    def feature_columns(self):
        return list(self.feature_groups)

    def to_dict(self):
        groups: dict[str, list[str]] = {}
        for col, grp in self.feature_groups.items():
            groups.setdefault(grp.value, []).append(col)
        return {
            "id_column": self.id_column,
            "month_column": self.month_column,
            "adas13_column": self.adas13_column,
            "cs_column": self.cs_column,
            "missing_sentinels": list(self.missing_sentinels),
            "month_tolerance": self.month_tolerance,
            "feature_groups": groups,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            groups = {}
            for grp, cols in data.get("feature_groups", {}).items():
                for col in cols:
                    if col in groups:
                        raise CohortFormatError(
                            f"schema assigns column {col!r} to multiple groups")
                    groups[col] = FeatureGroup(grp)
            return cls(
                id_column=data["id_column"],
                month_column=data["month_column"],
                adas13_column=data["adas13_column"],
                cs_column=data["cs_column"],
                feature_groups=groups,
                missing_sentinels=tuple(
                    float(s) for s in data.get("missing_sentinels",
                                               DEFAULT_SENTINELS)),
                month_tolerance=int(data.get("month_tolerance", 0)),
            )
        except KeyError as exc:
            raise CohortFormatError(f"schema missing required key {exc}") from exc

    def save(self, path):
        import yaml
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    @classmethod
    def load(cls, path):
        import yaml
        with open(path) as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise CohortFormatError(f"schema file {path} is not a mapping")
        return cls.from_dict(data)


def _parse_number(raw, sentinels):
    """Return (value, is_missing); empty cells and sentinel codes are missing."""
    raw = raw.strip()
    if raw == "":
        return 0.0, True
    value = float(raw)  # caller wraps ValueError with location info
    if value in sentinels:
        return 0.0, True
    return value, False


def ingest_cohort(path, schema: CohortSchema) -> Cohort:
    """Read a delimited cohort file into a validated :class:`Cohort`.

    Sentinel-coded and empty feature cells become missing-mask entries; rows
    are grouped by patient and sorted by month. Errors carry the offending
    row number (1-based, header = row 1) and column name.
    """
    sentinels = set(schema.missing_sentinels)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise CohortFormatError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CohortFormatError(f"{path}: no records") from None
        col_index = {name: i for i, name in enumerate(header)}
        required = [schema.id_column, schema.month_column,
                    schema.adas13_column, schema.cs_column]
        missing_cols = [c for c in required + schema.feature_columns
                        if c not in col_index]
        if missing_cols:
            raise CohortFormatError(
                f"{path}: columns absent from header: {', '.join(missing_cols)}")
        feature_names = [c for c in header if c in schema.feature_groups]

        rows: dict[str, dict[int, VisitRecord]] = {}
        n_rows = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or row[0].startswith("#"):
                continue            # blank or provenance-footer line
            n_rows += 1

            def cell(column):
                return row[col_index[column]]

            def number(column):
                try:
                    return _parse_number(cell(column), sentinels)
                except ValueError:
                    raise CohortFormatError(
                        f"{path}:{lineno}: non-numeric value {cell(column)!r} "
                        f"in column {column!r}") from None

            pid = cell(schema.id_column).strip()
            if not pid:
                raise CohortFormatError(
                    f"{path}:{lineno}: empty value in column "
                    f"{schema.id_column!r}")
            month_val, month_missing = number(schema.month_column)
            if month_missing or month_val != int(month_val) or month_val < 0:
                raise CohortFormatError(
                    f"{path}:{lineno}: column {schema.month_column!r} must be "
                    f"a non-negative integer, got {cell(schema.month_column)!r}")
            month = int(month_val)

            adas_val, adas_missing = number(schema.adas13_column)
            if not adas_missing and not (ADAS_RANGE[0] <= adas_val <= ADAS_RANGE[1]):
                raise CohortFormatError(
                    f"{path}:{lineno}: column {schema.adas13_column!r} value "
                    f"{adas_val} outside {ADAS_RANGE}")
            cs_val, cs_missing = number(schema.cs_column)
            if not cs_missing and cs_val not in (1.0, 2.0, 3.0):
                raise CohortFormatError(
                    f"{path}:{lineno}: column {schema.cs_column!r} must be "
                    f"1, 2 or 3, got {cell(schema.cs_column)!r}")

            feats = np.zeros(len(feature_names))
            mask = np.zeros(len(feature_names), dtype=bool)
            for i, col in enumerate(feature_names):
                feats[i], mask[i] = number(col)

            visit = VisitRecord(pid, month, feats, mask,
                                None if adas_missing else adas_val,
                                None if cs_missing else int(cs_val))
            per_patient = rows.setdefault(pid, {})
            if month in per_patient:
                raise CohortFormatError(
                    f"{path}:{lineno}: duplicate visit (patient {pid}, "
                    f"month {month})")
            per_patient[month] = visit

        if n_rows == 0:
            raise CohortFormatError(f"{path}: no records")

    patients = {pid: [visits[m] for m in sorted(visits)]
                for pid, visits in rows.items()}
    groups = {c: schema.feature_groups[c] for c in feature_names}
    return Cohort(patients, feature_names, groups).validate()


def _format_value(value):
    # repr round-trips float64 exactly through the CSV
    return repr(float(value))


def write_cohort(cohort: Cohort, path, schema: CohortSchema):
    """Write ``cohort`` in the ingestion format; masked cells get the first
    sentinel so that re-ingesting reproduces the cohort exactly."""
    sentinel = _format_value(schema.missing_sentinels[0])
    header = ([schema.id_column, schema.month_column,
               schema.adas13_column, schema.cs_column]
              + list(cohort.feature_names))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for pid, visits in cohort.patients.items():
            for v in visits:
                row = [pid, str(v.month),
                       sentinel if v.adas13 is None else _format_value(v.adas13),
                       sentinel if v.cs is None else str(int(v.cs))]
                row.extend(sentinel if v.missing[i] else _format_value(x)
                           for i, x in enumerate(v.features))
                writer.writerow(row)


def align_windows(visits, required=WINDOW_MONTHS, tolerance=0):
    """Pick the visits sitting on the 5-slot grid {0,6,12,18,24}.

    Off-grid visits (month 3, month 36, ...) are skipped, never fabricated.
    Raises :class:`AlignmentError` naming the smallest absent grid month.
    """
    grid = []
    for m in required:
        candidates = [v for v in visits if abs(v.month - m) <= tolerance]
        if not candidates:
            raise AlignmentError(f"missing month {m}")
        grid.append(min(candidates, key=lambda v: (abs(v.month - m), v.month)))
    return grid


def label_conversion(grid) -> ConversionLabel:
    """Label the first CS transition to AD across the four 6-month windows.

    ``grid`` is the 5-slot output of :func:`align_windows`; every slot must
    carry a CS value (run forward-fill first). A baseline already at AD is
    out of scope for conversion and flagged ``baseline_excluded``.
    """
    status = []
    for v in grid:
        if v.cs is None:
            raise ValueError(f"patient {v.patient_id}: CS missing at month "
                             f"{v.month} after fill")
        status.append(int(v.cs))
    if status[0] == ClinicalStatus.AD:
        return ConversionLabel((False,) * 4, False, None, True)
    per_window = [False] * 4
    first = None
    for w in range(1, 5):
        if status[w] == ClinicalStatus.AD:
            per_window[w - 1] = True
            first = w
            break
    return ConversionLabel(tuple(per_window), first is not None, first, False)


def conversion_labels(cohort: Cohort, tolerance=None) -> dict[str, ConversionLabel]:
    """Label every patient in ``cohort`` that has the full 5-slot grid."""
    labels = {}
    for pid, visits in cohort.patients.items():
        grid = align_windows(visits, tolerance=0 if tolerance is None else tolerance)
        labels[pid] = label_conversion(grid)
    return labels


def copy_cohort(cohort: Cohort) -> Cohort:
    return Cohort({pid: [v.copy() for v in visits]
                   for pid, visits in cohort.patients.items()},
                  list(cohort.feature_names), dict(cohort.feature_groups))
