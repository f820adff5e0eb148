"""Synthetic cohorts and survival data with known ground truth.

The cohort generator draws, per patient, a baseline group (CN/MCI/AD), a
linear score trajectory (intercept from the group's score distribution,
plus a patient slope) and an optional hidden additive offset. Features are
a fixed linear map of the (offset-free) latent state, so the offset is
deliberately invisible to population-level models but recoverable from a
patient's own history, which is what makes personalization testable.
Clinical status follows score thresholds, so conversions correlate with
rising scores.

The survival generator draws exponential event times under a proportional-
hazards model with known coefficients; by default times are discretized to
the four window ends, matching the pipeline's data shape, while
``grid=None`` keeps them continuous (untied) for estimator-recovery tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .cohort import Cohort, CohortSchema, FeatureGroup, VisitRecord
from .survival import SurvivalRecord
from .validation import check_in_unit_interval, check_positive

GROUP_NAMES = {1: "CN", 2: "MCI", 3: "AD"}

# slope enters the feature map in score-like units so that population models
# can actually read it out of the features
SLOPE_FEATURE_SCALE = 36.0


@dataclass
class CohortSpec:
    n_patients: int = 100
    visit_schedule: tuple[int, ...] = (0, 6, 12, 18, 24)
    group_proportions: tuple[float, float, float] = (0.4, 0.4, 0.2)
    group_score_means: tuple[float, float, float] = (8.780, 15.735, 33.010)
    group_score_sds: tuple[float, float, float] = (4.4512, 7.5023, 11.7477)
    slope_mean: float = 0.15            # score points per month
    slope_sd: float = 0.15
    offset_sd: float = 0.0              # hidden per-patient additive offset
    n_features: int = 8
    feature_map: np.ndarray | None = None       # (D, 2), default seeded
    feature_intercept: np.ndarray | None = None  # (D,)
    feature_noise_sd: float = 0.0
    score_noise_sd: float = 0.0
    missing_rate: float = 0.0
    mci_threshold: float = 12.0
    ad_threshold: float = 28.0
    survival_beta: tuple[float, ...] = (1.0, -0.5, 0.0, 0.0)
    survival_baseline_hazard: float = 0.05
    seed: int = 0

    def validate(self):
        if self.n_patients < 1:
            raise ValueError("n_patients must be >= 1")
        months = tuple(self.visit_schedule)
        if len(months) < 1 or any(m < 0 for m in months) \
                or sorted(set(months)) != list(months):
            raise ValueError("visit_schedule must be strictly increasing "
                             "non-negative months")
        if abs(sum(self.group_proportions) - 1.0) > 1e-9:
            raise ValueError("group_proportions must sum to 1")
        if any(p < 0 for p in self.group_proportions):
            raise ValueError("group_proportions must be non-negative")
        if any(s < 0 for s in self.group_score_sds):
            raise ValueError("group_score_sds must be >= 0")
        for name in ("slope_sd", "offset_sd", "feature_noise_sd",
                     "score_noise_sd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        check_in_unit_interval(self.missing_rate, "missing_rate")
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        if not self.mci_threshold < self.ad_threshold:
            raise ValueError("mci_threshold must be below ad_threshold")
        check_positive(self.survival_baseline_hazard, "survival_baseline_hazard")
        return self


@dataclass
class PatientTruth:
    group: int                   # sampled baseline group, 1/2/3
    intercept: float
    slope: float
    offset: float
    true_scores: dict[int, float]    # month -> noiseless score (with offset)


@dataclass
class CohortTruth:
    feature_map: np.ndarray
    feature_intercept: np.ndarray
    patients: dict[str, PatientTruth] = field(default_factory=dict)

    def to_json(self, path):
        payload = {
            "feature_map": self.feature_map.tolist(),
            "feature_intercept": self.feature_intercept.tolist(),
            "patients": {
                pid: {"group": t.group, "intercept": t.intercept,
                      "slope": t.slope, "offset": t.offset,
                      "true_scores": {str(m): s
                                      for m, s in t.true_scores.items()}}
                for pid, t in self.patients.items()
            },
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            payload = json.load(fh)
        truth = cls(np.asarray(payload["feature_map"]),
                    np.asarray(payload["feature_intercept"]))
        for pid, t in payload["patients"].items():
            truth.patients[pid] = PatientTruth(
                t["group"], t["intercept"], t["slope"], t["offset"],
                {int(m): s for m, s in t["true_scores"].items()})
        return truth


def synthetic_schema(spec: CohortSpec) -> CohortSchema:
    """Schema matching the files written for a generated cohort."""
    groups = {f"f{i:03d}": FeatureGroup.OTHER for i in range(spec.n_features)}
    return CohortSchema(id_column="patient_id", month_column="month",
                        adas13_column="adas13", cs_column="cs",
                        feature_groups=groups)


def _status_of(score, spec):
    if score < spec.mci_threshold:
        return 1
    if score < spec.ad_threshold:
        return 2
    return 3


def generate_cohort(spec: CohortSpec):
    """Generate (cohort, hidden truth); byte-deterministic given the seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    d = spec.n_features

    if spec.feature_map is None:
        W = rng.normal(size=(d, 2))
    else:
        W = np.asarray(spec.feature_map, dtype=np.float64)
        if W.shape != (d, 2):
            raise ValueError(f"feature_map must be ({d}, 2), got {W.shape}")
    if spec.feature_intercept is None:
        b = rng.normal(size=d)
    else:
        b = np.asarray(spec.feature_intercept, dtype=np.float64)
        if b.shape != (d,):
            raise ValueError(f"feature_intercept must be ({d},), got {b.shape}")

    feature_names = [f"f{i:03d}" for i in range(d)]
    groups = {n: FeatureGroup.OTHER for n in feature_names}
    patients = {}
    truth = CohortTruth(W, b)
    width = max(4, len(str(spec.n_patients - 1)))
    means = np.asarray(spec.group_score_means)
    sds = np.asarray(spec.group_score_sds)

    for i in range(spec.n_patients):
        pid = f"S{i:0{width}d}"
        group = int(rng.choice(3, p=spec.group_proportions)) + 1
        intercept = float(rng.normal(means[group - 1], sds[group - 1]))
        slope = float(rng.normal(spec.slope_mean, spec.slope_sd))
        offset = float(rng.normal(0.0, spec.offset_sd)) if spec.offset_sd else 0.0

        visits = []
        true_scores = {}
        for month in spec.visit_schedule:
            base = intercept + slope * month
            latent = np.array([base, slope * SLOPE_FEATURE_SCALE])
            feats = W @ latent + b
            if spec.feature_noise_sd:
                feats = feats + rng.normal(0.0, spec.feature_noise_sd, size=d)
            true = float(np.clip(base + offset, 0.0, 85.0))
            observed = true
            if spec.score_noise_sd:
                observed = float(np.clip(true + rng.normal(0.0, spec.score_noise_sd),
                                         0.0, 85.0))
            mask = (rng.random(d) < spec.missing_rate
                    if spec.missing_rate else np.zeros(d, dtype=bool))
            visits.append(VisitRecord(pid, int(month), feats, mask,
                                      observed, _status_of(true, spec)))
            true_scores[int(month)] = true
        patients[pid] = visits
        truth.patients[pid] = PatientTruth(group, intercept, slope, offset,
                                           true_scores)

    cohort = Cohort(patients, feature_names, groups).validate()
    return cohort, truth


def generate_survival_data(beta_true, n, censor_rate, seed,
                           baseline_hazard=0.05, grid=(6, 12, 18, 24)):
    """Proportional-hazards survival records with known coefficients.

    Covariates are standard normal; event times are exponential with rate
    baseline_hazard * exp(z beta). Independent exponential censoring is
    calibrated so that under a null effect the censored fraction equals
    ``censor_rate``. With ``grid`` (the default) observed times land on the
    window ends, with administrative censoring past the last window;
    ``grid=None`` keeps exact continuous times.
    """
    beta_true = np.asarray(beta_true, dtype=np.float64).ravel()
    if n < 10:
        raise ValueError(f"need n >= 10, got {n}")
    censor_rate = check_in_unit_interval(censor_rate, "censor_rate")
    if censor_rate >= 1.0:
        raise ValueError("censor_rate 1.0 leaves no observable events")
    h0 = check_positive(baseline_hazard, "baseline_hazard")

    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, beta_true.size))
    lam = h0 * np.exp(z @ beta_true)
    T = rng.exponential(1.0 / lam)
    if censor_rate > 0:
        C = rng.exponential((1.0 - censor_rate) / (h0 * censor_rate), size=n)
    else:
        C = np.full(n, np.inf)
    obs = np.minimum(T, C)
    event = T <= C

    if grid is not None:
        grid = np.asarray(sorted(grid), dtype=np.float64)
        horizon = grid[-1]
        event = event & (obs <= horizon)
        obs = np.minimum(obs, horizon)
        # snap to the end of the containing window
        obs = grid[np.searchsorted(grid, obs, side="left")]

    return [SurvivalRecord(z[i], float(obs[i]), bool(event[i]), f"R{i:05d}")
            for i in range(n)]
