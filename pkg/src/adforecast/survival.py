"""Cox proportional-hazards model for 24-month conversion.

The log partial likelihood uses the Breslow approximation for tied event
times (with only four possible event months, ties dominate). Fitting is
Newton-Raphson from beta = 0 with step-halving; the Breslow estimator then
yields the cumulative baseline hazard, from which per-window conversion
probabilities follow as 1 - S(t | z) with
S(t | z) = exp(-H0(t) * exp(z beta)).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .cohort import ConversionLabel
from .validation import check_consistent_length, check_matrix, check_vector

CONVERSION_WINDOWS = (6, 12, 18, 24)


@dataclass
class SurvivalRecord:
    z: np.ndarray          # covariates (p,)
    time: float            # event or censoring month
    event: bool            # True = conversion observed
    patient_id: str | None = None

    def __post_init__(self):
        self.z = check_vector(self.z, name="z")
        if not np.isfinite(self.time) or self.time <= 0:
            raise ValueError(f"time must be positive, got {self.time}")
        self.event = bool(self.event)


def _as_arrays(records):
    Z = np.stack([r.z for r in records])
    time = np.array([r.time for r in records], dtype=np.float64)
    event = np.array([r.event for r in records], dtype=bool)
    return Z, time, event


class _PartialLikelihood:
    """Breslow log partial likelihood with analytic gradient and Hessian.

    Rows are sorted by descending time once; reverse cumulative sums then
    give every risk-set aggregate in O(n p^2).
    """

    def __init__(self, Z, time, event):
        Z = check_matrix(Z)
        time = check_vector(time, length=Z.shape[0])
        event = np.asarray(event, dtype=bool).ravel()
        check_consistent_length(Z, time, event, names=["z", "time", "event"])
        if not event.any():
            raise ValueError("no events: partial likelihood undefined")
        order = np.argsort(-time, kind="stable")
        self.Z = Z[order]
        self.time = time[order]
        self.event = event[order]
        self.n, self.p = Z.shape
        starts = np.flatnonzero(np.r_[True, np.diff(self.time) != 0])
        self._starts = starts
        self._ends = np.r_[starts[1:], self.n] - 1

    def __call__(self, beta, order=2):
        beta = check_vector(beta, length=self.p)
        Z, ev = self.Z, self.event.astype(np.float64)
        eta = Z @ beta
        w = np.exp(eta)
        cw = np.cumsum(w)
        d = np.add.reduceat(ev, self._starts)
        has = d > 0
        W = cw[self._ends][has]
        d = d[has]
        seta = np.add.reduceat(ev * eta, self._starts)[has]
        value = float(seta.sum() - (d * np.log(W)).sum())
        if order == 0:
            return value
        cwz = np.cumsum(w[:, None] * Z, axis=0)
        se = np.add.reduceat(ev[:, None] * Z, self._starts, axis=0)[has]
        Zbar = cwz[self._ends][has] / W[:, None]
        grad = se.sum(axis=0) - (d[:, None] * Zbar).sum(axis=0)
        if order == 1:
            return value, grad
        czz = np.cumsum(w[:, None, None] * (Z[:, :, None] * Z[:, None, :]),
                        axis=0)
        ZZbar = czz[self._ends][has] / W[:, None, None]
        hess = -(d[:, None, None]
                 * (ZZbar - Zbar[:, :, None] * Zbar[:, None, :])).sum(axis=0)
        return value, grad, hess

    def risk_set_sizes(self):
        """|{j : time_j >= t_i}| per distinct event time, ascending in time."""
        sizes = [int(e + 1) for s, e in zip(self._starts, self._ends)
                 if self.event[s:e + 1].any()]
        return sizes[::-1]


def log_partial_likelihood(beta, records):
    """Breslow log partial likelihood with analytic gradient and Hessian."""
    Z, time, event = _as_arrays(records)
    return _PartialLikelihood(Z, time, event)(beta, order=2)


@dataclass
class BreslowBaseline:
    """Non-decreasing step estimate of the cumulative baseline hazard."""
    knots: np.ndarray        # ascending distinct event times
    cumhaz: np.ndarray       # H0 at each knot

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.knots, t, side="right")
        vals = np.concatenate([[0.0], self.cumhaz])[idx]
        return float(vals) if t.ndim == 0 else vals


def breslow_baseline(beta, records) -> BreslowBaseline:
    """H0(t) = sum over event times t_i <= t of d_i / sum_{risk} exp(z beta)."""
    Z, time, event = _as_arrays(records)
    beta = check_vector(beta, length=Z.shape[1])
    w = np.exp(Z @ beta)
    knots = np.unique(time[event])
    increments = np.empty(knots.size)
    for i, t in enumerate(knots):
        d = int(((time == t) & event).sum())
        increments[i] = d / float(w[time >= t].sum())
    return BreslowBaseline(knots, np.cumsum(increments))


@dataclass
class CoxFitReport:
    iterations: int
    grad_norm: float
    log_partial_likelihood: float
    converged: bool


class CoxPH(BaseEstimator):
    """Cox proportional-hazards regression (Breslow ties, Newton-Raphson).

    Parameters
    ----------
    tol : gradient infinity-norm stopping threshold.
    max_iter : Newton iteration budget.
    beta_bound : divergence guard; ||beta|| beyond it raises (monotone
        likelihood / separation).
    """

    def __init__(self, tol=1e-8, max_iter=100, beta_bound=50.0):
        self.tol = tol
        self.max_iter = max_iter
        self.beta_bound = beta_bound

    def fit(self, Z, time, event):
        Z = check_matrix(Z)
        time = check_vector(time, length=Z.shape[0])
        event = np.asarray(event, dtype=bool).ravel()
        pl = _PartialLikelihood(Z, time, event)

        # a column constant within every risk set carries no information and
        # makes the Hessian singular
        in_risk = pl.time >= pl.time[pl.event].min()
        flat = np.ptp(pl.Z[in_risk], axis=0) == 0
        if flat.any():
            cols = ", ".join(map(str, np.flatnonzero(flat)))
            raise ValueError(f"covariate column(s) {cols} constant across "
                             "all risk sets")

        beta = np.zeros(Z.shape[1])
        value, grad, hess = pl(beta)
        it = 0
        converged = False
        for it in range(1, int(self.max_iter) + 1):
            if np.max(np.abs(grad)) < self.tol:
                converged = True
                it -= 1
                break
            try:
                step = np.linalg.solve(hess, -grad)
            except np.linalg.LinAlgError:
                raise ValueError("singular Hessian: covariates may be "
                                 "collinear") from None
            t = 1.0
            stalled = False
            while True:
                cand = beta + t * step
                v2 = pl(cand, order=0)
                if np.isfinite(v2) and v2 >= value:
                    break
                t *= 0.5
                if t < 1e-12:
                    stalled = True
                    break
            if stalled:
                break
            beta = cand
            value, grad, hess = pl(beta)
            if float(np.linalg.norm(beta)) > self.beta_bound:
                raise ValueError("monotone likelihood: |beta| diverged "
                                 "(separation in the data)")
        else:
            converged = np.max(np.abs(grad)) < self.tol

        self.beta_ = beta
        self.fit_report_ = CoxFitReport(it, float(np.max(np.abs(grad))),
                                        value, converged)
        records = [SurvivalRecord(z, t_, e_) for z, t_, e_ in
                   zip(Z, time, event)]
        self.baseline_ = breslow_baseline(beta, records)
        self.n_events_ = int(event.sum())
        return self

    def fit_records(self, records):
        Z, time, event = _as_arrays(records)
        return self.fit(Z, time, event)

    def predict_survival(self, z, times):
        z = check_vector(z)
        risk = float(np.exp(z @ self.beta_))
        H = self.baseline_(np.asarray(times, dtype=np.float64))
        return np.exp(-H * risk)


def cox_fit(records, tol=1e-8, max_iter=100) -> CoxPH:
    """Fit a :class:`CoxPH` model on survival records."""
    return CoxPH(tol=tol, max_iter=max_iter).fit_records(records)


def conversion_probabilities(model: CoxPH, z, windows=CONVERSION_WINDOWS,
                             normalize=False):
    """P(converted by t_w | z) = 1 - exp(-H0(t_w) exp(z beta)) per window.

    Non-decreasing in w. With ``normalize`` the four values are rescaled to
    sum to one (off by default).
    """
    probs = 1.0 - model.predict_survival(z, np.asarray(windows, dtype=float))
    if normalize:
        s = probs.sum()
        if s > 0:
            probs = probs / s
    return probs


def build_survival_records(averaged, patient_ids, labels, mode="levels",
                           baseline_scores=None):
    """Turn per-patient averaged 4-window forecasts into survival records.

    ``averaged`` is (N, 4); ``labels`` maps patient id to its
    :class:`ConversionLabel`. ``mode="levels"`` uses the scores directly;
    ``mode="first_differences"`` uses window-to-window differences prefixed
    by (score_6 - baseline score), requiring ``baseline_scores``. Converters
    get time = 6 * first_window with an event; non-converters are
    right-censored at 24 months.
    """
    averaged = check_matrix(averaged)
    if averaged.shape[1] != 4:
        raise ValueError(f"averaged forecasts must have 4 columns, got "
                         f"{averaged.shape[1]}")
    check_consistent_length(averaged, patient_ids,
                            names=["averaged", "patient_ids"])
    missing = [p for p in patient_ids if p not in labels]
    if missing:
        raise ValueError(f"patient mismatch: no label for {missing[:5]}")
    if mode not in ("levels", "first_differences"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "first_differences" and baseline_scores is None:
        raise ValueError("first_differences mode requires baseline_scores")

    records = []
    for i, pid in enumerate(patient_ids):
        label: ConversionLabel = labels[pid]
        if label.baseline_excluded:
            raise ValueError(f"patient {pid} is baseline-excluded (already AD "
                             "at month 0); filter before building records")
        scores = averaged[i]
        if mode == "levels":
            z = scores.copy()
        else:
            base = float(baseline_scores[pid])
            z = np.r_[scores[0] - base, np.diff(scores)]
        if label.converted:
            records.append(SurvivalRecord(z, 6.0 * label.first_window, True, pid))
        else:
            records.append(SurvivalRecord(z, 24.0, False, pid))
    return records


PROBABILITY_COLUMNS = ["patient_id", "P_6", "P_12", "P_18", "P_24",
                       "change_in_cs"]


def write_probability_table(path, rows, footer=None):
    """Rows: (patient_id, 4 probabilities, ground-truth change-in-CS 0/1)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROBABILITY_COLUMNS)
        for pid, probs, changed in rows:
            writer.writerow([pid] + [f"{p:.6f}" for p in probs]
                            + [str(int(changed))])
        if footer:
            fh.write(footer)
