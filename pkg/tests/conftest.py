import numpy as np
import pytest

from adforecast.cohort import Cohort, CohortSchema, FeatureGroup, VisitRecord
from adforecast.synth import CohortSpec


def noiseless_spec(n_patients, seed, n_features=6,
                   schedule=(0, 6, 12, 18, 24, 30, 36)):
    """Noise-free cohort whose score range stays inside (0, 85), so the
    clamp never binds and targets are exactly affine in the features."""
    return CohortSpec(n_patients=n_patients, visit_schedule=schedule,
                      group_score_means=(20.0, 30.0, 40.0),
                      group_score_sds=(3.0, 4.0, 5.0),
                      slope_mean=0.15, slope_sd=0.1,
                      offset_sd=0.0, feature_noise_sd=0.0,
                      score_noise_sd=0.0, missing_rate=0.0,
                      n_features=n_features, seed=seed)


def make_visit(pid, month, features, missing=None, adas13=10.0, cs=2):
    features = np.asarray(features, dtype=np.float64)
    if missing is None:
        missing = np.zeros(features.size, dtype=bool)
    return VisitRecord(pid, month, features, np.asarray(missing, dtype=bool),
                       adas13, cs)


def make_cohort(patient_visits, feature_names=None):
    """patient_visits: dict pid -> list of (month, features, kwargs)."""
    first = next(iter(patient_visits.values()))
    d = len(np.atleast_1d(first[0][1]))
    names = feature_names or [f"f{i:03d}" for i in range(d)]
    patients = {}
    for pid, visits in patient_visits.items():
        patients[pid] = [make_visit(pid, m, f, **kw) for m, f, kw in visits]
    groups = {n: FeatureGroup.OTHER for n in names}
    return Cohort(patients, names, groups).validate()


@pytest.fixture
def simple_schema():
    return CohortSchema(
        id_column="patient_id", month_column="month",
        adas13_column="adas13", cs_column="cs",
        feature_groups={"f000": FeatureGroup.OTHER,
                        "f001": FeatureGroup.OTHER})
