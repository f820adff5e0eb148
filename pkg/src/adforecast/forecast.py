"""The three forecasting variants and their 4-horizon outputs.

* source model: one GP per horizon, trained on all training-fold rows.
* personalized model: the source posterior conditioned additionally on the
  patient's own observed (input, score) pairs, under the source
  hyperparameters; with no history it coincides with the source model.
* target model: a GP over the patient's history alone, reusing the source
  hyperparameters (per-patient histories are too short to re-optimize).

Predictive means are clamped to the valid score range [0, 85]; raw values
are retained alongside.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .gp import ExactGPRegressor
from .preprocess import HORIZONS, SupervisedSet
from .validation import check_matrix, check_vector

SCORE_RANGE = (0.0, 85.0)
MODEL_KINDS = ("sGP", "pGP", "tGP")


@dataclass(frozen=True)
class HorizonForecast:
    patient_id: str
    anchor_month: int
    model_kind: str
    horizons: tuple[int, ...]
    means: tuple[float, ...]          # clamped to SCORE_RANGE
    variances: tuple[float, ...]
    raw_means: tuple[float, ...]


@dataclass
class HorizonPredictor:
    """Four per-horizon GPs sharing one input space."""
    models: tuple[ExactGPRegressor, ...]
    kind: str
    horizons: tuple[int, ...] = HORIZONS

    def predict_point(self, x):
        pairs = [m.predict_point(x) for m in self.models]
        return (np.array([p[0] for p in pairs]),
                np.array([p[1] for p in pairs]))


def train_source(train: SupervisedSet, kernel=None, noise_variance="auto",
                 budget=100, grad_tol=1e-6) -> HorizonPredictor:
    """Fit the population-level model: one optimized GP per horizon, all on
    the same training rows."""
    if train.n_rows == 0:
        raise ValueError("source model requires a non-empty training set")
    models = []
    for h in range(train.y.shape[1]):
        gp = ExactGPRegressor(kernel=kernel, noise_variance=noise_variance,
                              prior_mean="auto", optimize=budget > 0,
                              max_iter=budget, grad_tol=grad_tol)
        models.append(gp.fit(train.X, train.y[:, h]))
    return HorizonPredictor(tuple(models), "sGP", train.horizons)


def personalize(source: HorizonPredictor, X_hist, y_hist) -> HorizonPredictor:
    """Condition the source posterior on the patient's observed history.

    ``X_hist`` holds the inputs of past anchor visits, ``y_hist`` the
    corresponding observed 4-horizon targets, shape (n_hist, 4). With an
    empty history the returned predictor is the source model itself.
    """
    X_hist = check_matrix(X_hist, allow_empty=True)
    y_hist = np.asarray(y_hist, dtype=np.float64).reshape(
        X_hist.shape[0], len(source.models))
    models = tuple(m.condition_on(X_hist, y_hist[:, h])
                   for h, m in enumerate(source.models))
    return HorizonPredictor(models, "pGP", source.horizons)


def train_target(X_hist, y_hist, source: HorizonPredictor) -> HorizonPredictor:
    """Fit per-horizon GPs on the patient's own history only, reusing the
    source hyperparameters (kernel, noise, prior mean)."""
    X_hist = check_matrix(X_hist, allow_empty=True)
    if X_hist.shape[0] == 0:
        raise ValueError("tGP undefined before first observation")
    y_hist = np.asarray(y_hist, dtype=np.float64).reshape(
        X_hist.shape[0], len(source.models))
    models = []
    for h, src in enumerate(source.models):
        gp = ExactGPRegressor(kernel=src.kernel_,
                              noise_variance=src.noise_variance_,
                              prior_mean=src.prior_mean_, optimize=False)
        models.append(gp.fit(X_hist, y_hist[:, h]))
    return HorizonPredictor(tuple(models), "tGP", source.horizons)


def forecast(predictor: HorizonPredictor, x, patient_id, anchor_month) -> HorizonForecast:
    """4-horizon forecast at input ``x``; means clamped to the score range."""
    x = check_vector(x, name="x")
    raw, var = predictor.predict_point(x)
    clamped = np.clip(raw, *SCORE_RANGE)
    return HorizonForecast(patient_id, int(anchor_month), predictor.kind,
                           predictor.horizons, tuple(clamped), tuple(var),
                           tuple(raw))


def ensemble_average(*forecasts: HorizonForecast) -> np.ndarray:
    """Per-horizon arithmetic mean of the source, personalized and target
    forecasts for one (patient, anchor). Order-insensitive."""
    kinds = sorted(f.model_kind for f in forecasts)
    if kinds != sorted(MODEL_KINDS):
        raise ValueError(f"model-kind mismatch: expected one forecast each of "
                         f"{MODEL_KINDS}, got {tuple(f.model_kind for f in forecasts)}")
    keys = {(f.patient_id, f.anchor_month) for f in forecasts}
    if len(keys) != 1:
        raise ValueError(f"forecasts disagree on (patient, anchor): {sorted(keys)}")
    return np.mean([f.means for f in forecasts], axis=0)


FORECAST_COLUMNS = ["patient_id", "anchor_month", "model_kind",
                    "mean_6", "var_6", "mean_12", "var_12",
                    "mean_18", "var_18", "mean_24", "var_24"]


def write_forecasts(path, forecasts, footer=None):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FORECAST_COLUMNS)
        for f in forecasts:
            row = [f.patient_id, str(f.anchor_month), f.model_kind]
            for mean, var in zip(f.means, f.variances):
                row.extend([f"{mean:.6f}", f"{var:.6f}"])
            writer.writerow(row)
        if footer:
            fh.write(footer)


def read_forecasts(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != FORECAST_COLUMNS:
            raise ValueError(f"{path}: unexpected forecast-table header")
        for row in reader:
            if not row or row[0].startswith("#"):
                continue
            means = tuple(float(row[3 + 2 * i]) for i in range(4))
            variances = tuple(float(row[4 + 2 * i]) for i in range(4))
            out.append(HorizonForecast(row[0], int(row[1]), row[2],
                                       HORIZONS, means, variances, means))
    return out
