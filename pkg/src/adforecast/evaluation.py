"""Evaluation harness: patient-independent k-fold CV over the three GP
variants, MAE and confusion metrics, k-means clustering and cohort
statistics.

Fold assignment happens at the patient level so no patient's visits span
train and test. Fold MAE pools absolute errors across all four horizons
and all test rows (one number per fold per model); a per-horizon breakdown
is kept alongside.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cohort import Cohort, align_windows, AlignmentError
from .forecast import HorizonPredictor, forecast, personalize, train_source, train_target
from .preprocess import ZNormalizer, build_supervised
from .validation import check_consistent_length

MODEL_KINDS = ("sGP", "pGP", "tGP")


# -- fold plans -------------------------------------------------------------

@dataclass
class FoldPlan:
    k: int
    seed: int
    assignments: dict[str, int]

    def fold_of(self, patient_id):
        return self.assignments[patient_id]

    def patients_in(self, fold):
        return [p for p, f in self.assignments.items() if f == fold]


def kfold_split(patient_ids, k=10, seed=0) -> FoldPlan:
    """Seeded shuffle + round-robin assignment; fold sizes differ by <= 1.

    The shuffle permutes the sorted id list, so the plan depends only on the
    id set, ``k`` and ``seed``.
    """
    ids = sorted(patient_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("patient ids must be unique")
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > len(ids):
        raise ValueError(f"k={k} exceeds the number of patients ({len(ids)})")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    assignments = {ids[j]: i % k for i, j in enumerate(order)}
    return FoldPlan(k, seed, assignments)


# -- scalar metrics -----------------------------------------------------------

def mae(pred, truth):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    check_consistent_length(pred, truth, names=["pred", "truth"])
    if pred.size == 0:
        raise ValueError("mae undefined on empty vectors")
    return float(np.mean(np.abs(pred - truth)))


@dataclass
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    accuracy: float
    undefined: tuple[str, ...] = ()        # metrics forced to 0 by a zero denominator

    @property
    def confusion(self):
        return (self.tp, self.fp, self.fn, self.tn)


def classification_metrics(predicted, truth) -> MetricsReport:
    """Precision, recall, F1 and accuracy from the confusion counts.

    Labels may be {-1, +1} or {0, 1}; the larger value is the positive
    class. A zero denominator yields 0 with the metric name flagged.
    """
    predicted = np.asarray(predicted).ravel()
    truth = np.asarray(truth).ravel()
    check_consistent_length(predicted, truth, names=["predicted", "truth"])
    values = set(np.unique(predicted)) | set(np.unique(truth))
    if not (values <= {-1, 1} or values <= {0, 1}):
        raise ValueError(f"labels must be binary (-1/+1 or 0/1), got {values}")
    pos = max(values)
    p_pos, t_pos = predicted == pos, truth == pos
    tp = int(np.sum(p_pos & t_pos))
    fp = int(np.sum(p_pos & ~t_pos))
    fn = int(np.sum(~p_pos & t_pos))
    tn = int(np.sum(~p_pos & ~t_pos))
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    f1 = ratio(2 * tp, 2 * tp + fp + fn, "f1")
    accuracy = ratio(tp + tn, tp + fp + fn + tn, "accuracy")
    return MetricsReport(tp, fp, fn, tn, precision, recall, f1, accuracy,
                         tuple(undefined))


# -- cross-validated forecasting ---------------------------------------------

@dataclass
class CVSettings:
    k: int = 10
    seed: int = 0
    hyper_budget: int = 10
    grad_tol: float = 1e-6
    normalize_scope: str = "per_fold"     # or "global"
    noise_variance: object = "auto"

    def __post_init__(self):
        if self.normalize_scope not in ("per_fold", "global"):
            raise ValueError(f"normalize_scope must be per_fold or global, "
                             f"got {self.normalize_scope!r}")


@dataclass
class CVResult:
    fold_plan: FoldPlan
    per_fold_mae: dict[str, np.ndarray]          # kind -> (k,)
    per_horizon_mae: dict[str, np.ndarray]       # kind -> (k, 4)
    summary: dict[str, tuple[float, float]]      # kind -> (mean, sample sd)
    forecasts: list = field(default_factory=list)
    rows_per_fold: np.ndarray | None = None
    zero_row_patients: list[str] = field(default_factory=list)


def run_cv(cohort: Cohort, settings: CVSettings | None = None) -> CVResult:
    """Patient-independent k-fold CV of the three forecasting variants.

    Per fold: the source model trains on all train-fold rows; each test
    patient's visits are rolled forward in anchor order, conditioning the
    personalized model on the rows already seen and fitting the target model
    on them (the source model substitutes at the first visit, where no
    history exists). Absolute errors pool over horizons and rows.
    """
    settings = settings or CVSettings()
    sup = build_supervised(cohort)
    if sup.n_rows == 0:
        raise ValueError("cohort yields no supervised rows")
    patients = sorted(set(sup.patient_of_row))
    plan = kfold_split(patients, settings.k, settings.seed)

    rows_by_patient: dict[str, list[int]] = {}
    for i, pid in enumerate(sup.patient_of_row):
        rows_by_patient.setdefault(pid, []).append(i)
    for pid in rows_by_patient:
        rows_by_patient[pid].sort(key=lambda i: sup.anchor_months[i])

    if settings.normalize_scope == "global":
        X_global = ZNormalizer().fit(sup.X).transform(sup.X)

    errors = {kind: [[] for _ in range(plan.k)] for kind in MODEL_KINDS}
    all_forecasts = []
    rows_per_fold = np.zeros(plan.k, dtype=int)

    for f in range(plan.k):
        train_rows = [i for i, pid in enumerate(sup.patient_of_row)
                      if plan.fold_of(pid) != f]
        test_patients = sorted(p for p in patients if plan.fold_of(p) == f)
        if not train_rows or not test_patients:
            continue
        if settings.normalize_scope == "per_fold":
            Xn = ZNormalizer().fit(sup.X[train_rows]).transform(sup.X)
        else:
            Xn = X_global

        train = sup.restrict(train_rows)
        train.X = Xn[train_rows]
        source = train_source(train, noise_variance=settings.noise_variance,
                              budget=settings.hyper_budget,
                              grad_tol=settings.grad_tol)

        for pid in test_patients:
            rows = rows_by_patient[pid]
            for j, r in enumerate(rows):
                hist = rows[:j]
                pgp = personalize(source, Xn[hist], sup.y[hist])
                if j > 0:
                    tgp = train_target(Xn[hist], sup.y[hist], source)
                else:
                    # no history yet: the population model stands in
                    tgp = HorizonPredictor(source.models, "tGP", source.horizons)
                fs = forecast(source, Xn[r], pid, sup.anchor_months[r])
                fp = forecast(pgp, Xn[r], pid, sup.anchor_months[r])
                ft = forecast(tgp, Xn[r], pid, sup.anchor_months[r])
                truth = sup.y[r]
                for kind, fc in (("sGP", fs), ("pGP", fp), ("tGP", ft)):
                    errors[kind][f].append(np.abs(np.array(fc.means) - truth))
                all_forecasts.extend([fs, fp, ft])
                rows_per_fold[f] += 1

    per_fold = {}
    per_horizon = {}
    summary = {}
    for kind in MODEL_KINDS:
        fold_mae = np.array([np.mean(np.stack(es)) if es else np.nan
                             for es in errors[kind]])
        horizon_mae = np.array([np.stack(es).mean(axis=0) if es
                                else [np.nan] * 4 for es in errors[kind]])
        per_fold[kind] = fold_mae
        per_horizon[kind] = horizon_mae
        valid = fold_mae[~np.isnan(fold_mae)]
        sd = float(np.std(valid, ddof=1)) if valid.size > 1 else 0.0
        summary[kind] = (float(np.mean(valid)), sd)

    return CVResult(plan, per_fold, per_horizon, summary, all_forecasts,
                    rows_per_fold, sup.zero_row_patients)


# -- k-means ------------------------------------------------------------------

@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    sse: float
    n_iter: int
    sse_history: list[float] = field(default_factory=list)


def _sq_dists(values, centroids):
    return ((values[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def kmeans(values, k, seed=0, max_iter=300) -> KMeansResult:
    """Lloyd's algorithm with seeded farthest-point initialization.

    The first centroid is a seeded random point; each further centroid is
    the point farthest from its nearest centroid (ties to the lowest index).
    An empty cluster is reseeded to the point farthest from its assigned
    centroid. Deterministic given the seed.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    n = values.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")

    rng = np.random.default_rng(seed)
    centroids = values[[int(rng.integers(n))]].copy()
    while centroids.shape[0] < k:
        d = _sq_dists(values, centroids).min(axis=1)
        centroids = np.vstack([centroids, values[int(np.argmax(d))]])

    assignments = np.full(n, -1)
    history = []
    for it in range(1, max_iter + 1):
        d = _sq_dists(values, centroids)
        new_assign = d.argmin(axis=1)
        sse = float(d[np.arange(n), new_assign].sum())
        history.append(sse)
        empty = [c for c in range(k) if not np.any(new_assign == c)]
        for c in empty:
            far = int(np.argmax(d[np.arange(n), new_assign]))
            centroids[c] = values[far]
            new_assign[far] = c
            d = _sq_dists(values, centroids)
        if np.array_equal(new_assign, assignments) and not empty:
            break
        assignments = new_assign
        for c in range(k):
            members = values[assignments == c]
            if members.size:
                centroids[c] = members.mean(axis=0)

    d = _sq_dists(values, centroids)
    assignments = d.argmin(axis=1)
    sse = float(d[np.arange(n), assignments].sum())
    return KMeansResult(assignments, centroids, sse, it, history)


# -- cohort statistics ---------------------------------------------------------

@dataclass
class GroupStat:
    mean: float
    sd: float
    n_visits: int
    n_patients: int
    sd_flagged: bool = False          # fewer than 2 observations


@dataclass
class GroupStatsResult:
    per_group: dict[int, GroupStat]
    membership: dict[str, tuple[int, ...]]
    trajectories: dict[int, list[tuple[int, float, float, int]]]  # (month, mean, sd, n)


def group_stats(cohort: Cohort) -> GroupStatsResult:
    """Per-CS-group ADAS statistics; patients in several groups count in each.

    Also emits the average trajectory +- SD per group over visit months.
    """
    scores: dict[int, list[float]] = {1: [], 2: [], 3: []}
    patients: dict[int, set] = {1: set(), 2: set(), 3: set()}
    traj: dict[int, dict[int, list[float]]] = {1: {}, 2: {}, 3: {}}
    membership: dict[str, tuple[int, ...]] = {}
    for pid, visits in cohort.patients.items():
        seen = set()
        for v in visits:
            if v.cs is None or v.adas13 is None:
                continue
            scores[v.cs].append(v.adas13)
            patients[v.cs].add(pid)
            traj[v.cs].setdefault(v.month, []).append(v.adas13)
            seen.add(int(v.cs))
        membership[pid] = tuple(sorted(seen))

    per_group = {}
    for cs, vals in scores.items():
        if not vals:
            per_group[cs] = GroupStat(float("nan"), 0.0, 0, 0, True)
            continue
        arr = np.asarray(vals)
        flagged = arr.size < 2
        sd = 0.0 if flagged else float(np.std(arr, ddof=1))
        per_group[cs] = GroupStat(float(arr.mean()), sd, arr.size,
                                  len(patients[cs]), flagged)
    trajectories = {}
    for cs, by_month in traj.items():
        series = []
        for month in sorted(by_month):
            arr = np.asarray(by_month[month])
            sd = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
            series.append((month, float(arr.mean()), sd, arr.size))
        trajectories[cs] = series
    return GroupStatsResult(per_group, membership, trajectories)


@dataclass
class WindowDiffStat:
    window: int            # 1..4
    mean: float
    maximum: float
    minimum: float
    median: float
    sd: float
    n: int
    sd_flagged: bool = False


def window_diff_stats(cohort: Cohort, tolerance=0) -> list[WindowDiffStat]:
    """Across patients with the full 5-slot grid: statistics of the ADAS
    score change in each of the four 6-month windows."""
    diffs = [[] for _ in range(4)]
    for pid, visits in cohort.patients.items():
        try:
            grid = align_windows(visits, tolerance=tolerance)
        except AlignmentError:
            continue
        if any(v.adas13 is None for v in grid):
            continue
        for w in range(1, 5):
            diffs[w - 1].append(grid[w].adas13 - grid[w - 1].adas13)
    out = []
    for w, vals in enumerate(diffs, start=1):
        if not vals:
            out.append(WindowDiffStat(w, float("nan"), float("nan"),
                                      float("nan"), float("nan"), 0.0, 0, True))
            continue
        arr = np.asarray(vals)
        flagged = arr.size < 2
        sd = 0.0 if flagged else float(np.std(arr, ddof=1))
        out.append(WindowDiffStat(w, float(arr.mean()), float(arr.max()),
                                  float(arr.min()), float(np.median(arr)),
                                  sd, arr.size, flagged))
    return out
