"""Linear soft-margin classifier for 24-month conversion.

Minimizes 0.5 ||w||^2 + C * sum_i hinge(y_i (w x_i + b)) by seeded
stochastic subgradient descent. Iterates are averaged per epoch and the
best epoch average (by exact objective, including the zero initializer)
is returned, so the reported objective sequence is non-increasing and the
result never scores worse than (w, b) = 0. Training is deterministic for
a fixed (X, y, C, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .validation import check_matrix, check_vector


def hinge_objective(w, b, X, y, C, sample_weight=None):
    """Exact primal objective 0.5||w||^2 + C sum w_i hinge_i."""
    margins = 1.0 - y * (X @ w + b)
    hinge = np.maximum(margins, 0.0)
    if sample_weight is not None:
        hinge = hinge * sample_weight
    return 0.5 * float(w @ w) + C * float(hinge.sum())


@dataclass
class SVMTrainingReport:
    epochs_run: int
    best_epoch: int
    objective_curve: list[float]      # best-so-far objective per epoch
    final_objective: float


class LinearSVM(BaseEstimator, ClassifierMixin):
    """Deterministic linear SVM trained by averaged subgradient descent.

    Parameters
    ----------
    C : soft-margin penalty (> 0).
    epochs : number of passes over the shuffled data.
    seed : shuffling seed; fixes the training trajectory.
    class_weight : None or "balanced". "balanced" scales each class's hinge
        penalty inversely to its frequency.

    The decision rule is sign(w x + b), with the tie (exactly 0) mapped to
    +1 deterministically.
    """

    def __init__(self, C=1.0, epochs=300, seed=0, class_weight=None):
        self.C = C
        self.epochs = epochs
        self.seed = seed
        self.class_weight = class_weight

    def fit(self, X, y):
        X = check_matrix(X)
        y = check_vector(y, length=X.shape[0])
        if self.C <= 0:
            raise ValueError(f"C must be > 0, got {self.C}")
        classes = np.unique(y)
        if not np.all(np.isin(classes, (-1.0, 1.0))):
            raise ValueError(f"labels must be in {{-1, +1}}, got {classes}")
        if classes.size < 2:
            raise ValueError("training data contains a single class")

        n, p = X.shape
        if self.class_weight == "balanced":
            n_pos = int((y > 0).sum())
            weight = np.where(y > 0, n / (2.0 * n_pos), n / (2.0 * (n - n_pos)))
        elif self.class_weight is None:
            weight = None
        else:
            raise ValueError(f"unknown class_weight {self.class_weight!r}")
        wvec = np.ones(n) if weight is None else weight

        rng = np.random.default_rng(self.seed)
        w = np.zeros(p)
        b = 0.0
        best_w, best_b = w.copy(), b
        best_obj = hinge_objective(w, b, X, y, self.C, weight)
        best_epoch = -1
        curve = []
        # work on the rescaled objective lam/2 ||w||^2 + (1/n) sum v_i hinge_i
        # with lam = 1/(C n): same minimizer, standard 1/(lam t) step schedule
        lam = 1.0 / (self.C * n)
        radius = 1.0 / np.sqrt(lam)      # optimum is confined to this ball
        t = 0
        for epoch in range(int(self.epochs)):
            order = rng.permutation(n)
            w_sum = np.zeros(p)
            b_sum = 0.0
            for i in order:
                t += 1
                eta = 1.0 / (lam * (t + 1))
                if y[i] * (X[i] @ w + b) < 1.0:
                    w = (1.0 - 1.0 / (t + 1)) * w + eta * wvec[i] * y[i] * X[i]
                    b = b + eta * wvec[i] * y[i]
                else:
                    w = (1.0 - 1.0 / (t + 1)) * w
                norm = float(np.linalg.norm(w))
                if norm > radius:
                    w = w * (radius / norm)
                w_sum += w
                b_sum += b
            w_avg = w_sum / n
            b_avg = b_sum / n
            obj = hinge_objective(w_avg, b_avg, X, y, self.C, weight)
            if obj < best_obj:
                best_obj, best_w, best_b, best_epoch = obj, w_avg.copy(), b_avg, epoch
            curve.append(best_obj)

        self.w_ = best_w
        self.b_ = float(best_b)
        self.training_report_ = SVMTrainingReport(int(self.epochs), best_epoch,
                                                  curve, best_obj)
        return self

    def decision_function(self, X):
        X = check_matrix(X)
        if X.shape[1] != self.w_.size:
            raise ValueError(f"query dimension {X.shape[1]} != model "
                             f"dimension {self.w_.size}")
        return X @ self.w_ + self.b_

    def predict(self, X):
        scores = self.decision_function(X)
        return np.where(scores >= 0.0, 1.0, -1.0)

    def predict_point(self, x):
        """(label, margin score) for one input."""
        score = float(self.decision_function(np.atleast_2d(x))[0])
        return (1.0 if score >= 0 else -1.0), score
