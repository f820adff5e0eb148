"""Covariance functions for exact GP regression.

``RBFKernel`` covers the isotropic and ARD squared-exponential forms;
``LinearKernel`` realizes the covariance of a Bayesian linear model
(k(x, x') = x' S0 x) and exists so GP predictions can be cross-checked
against the closed-form linear-regression posterior.

Trainable parameters live on a log scale (``theta``) so the evidence
optimizer works unconstrained.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist


class Kernel:
    def __call__(self, X, Z=None):
        raise NotImplementedError

    def diag(self, X):
        raise NotImplementedError

    @property
    def theta(self):
        """Log-scale parameter vector (possibly empty)."""
        return np.empty(0)

    @theta.setter
    def theta(self, value):
        if np.size(value):
            raise ValueError("kernel has no trainable parameters")

    def gradient(self, X, K):
        """dK/dtheta_i stacked along the last axis; K is self(X) precomputed."""
        return np.empty(K.shape + (0,))

    def clone(self):
        raise NotImplementedError


class RBFKernel(Kernel):
    """Squared-exponential kernel  variance * exp(-||x - x'||^2 / (2 l^2)).

    A scalar ``lengthscale`` gives the isotropic form; a length-D vector
    gives one lengthscale per input dimension (ARD).
    """

    def __init__(self, variance=1.0, lengthscale=1.0):
        variance = float(variance)
        if variance <= 0:
            raise ValueError(f"variance must be > 0, got {variance}")
        ls = np.asarray(lengthscale, dtype=np.float64)
        if ls.ndim > 1 or np.any(ls <= 0):
            raise ValueError("lengthscale must be a positive scalar or 1-D vector")
        self.variance = variance
        self.lengthscale = float(ls) if ls.ndim == 0 else ls

    @property
    def is_ard(self):
        return np.ndim(self.lengthscale) == 1

    def _check_dim(self, X):
        if self.is_ard and X.shape[1] != len(self.lengthscale):
            raise ValueError(
                f"ARD lengthscale has {len(self.lengthscale)} entries but "
                f"inputs have {X.shape[1]} dimensions")

    def __call__(self, X, Z=None):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Z = X if Z is None else np.atleast_2d(np.asarray(Z, dtype=np.float64))
        if X.shape[1] != Z.shape[1]:
            raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Z.shape[1]}")
        self._check_dim(X)
        ls = self.lengthscale
        sq = cdist(X / ls, Z / ls, metric="sqeuclidean")
        return self.variance * np.exp(-0.5 * sq)

    def diag(self, X):
        X = np.atleast_2d(X)
        return np.full(X.shape[0], self.variance)

    @property
    def theta(self):
        return np.r_[np.log(self.variance), np.log(np.atleast_1d(self.lengthscale))]

    @theta.setter
    def theta(self, value):
        value = np.asarray(value, dtype=np.float64)
        if value.size != 1 + np.size(self.lengthscale):
            raise ValueError("theta size mismatch")
        self.variance = float(np.exp(value[0]))
        ls = np.exp(value[1:])
        self.lengthscale = ls if self.is_ard else float(ls[0])

    def gradient(self, X, K):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n = X.shape[0]
        grads = np.empty((n, n, 1 + np.size(self.lengthscale)))
        grads[..., 0] = K                        # d/d log(variance)
        if self.is_ard:
            for d, ls in enumerate(self.lengthscale):
                sq_d = (X[:, d, None] - X[None, :, d]) ** 2
                grads[..., 1 + d] = K * sq_d / ls ** 2
        else:
            sq = cdist(X / self.lengthscale, X / self.lengthscale,
                       metric="sqeuclidean")
            grads[..., 1] = K * sq               # d/d log(lengthscale)
        return grads

    def clone(self):
        ls = self.lengthscale
        return RBFKernel(self.variance, ls.copy() if self.is_ard else ls)

    def __repr__(self):
        return f"RBFKernel(variance={self.variance!r}, lengthscale={self.lengthscale!r})"


class LinearKernel(Kernel):
    """Dot-product kernel k(x, x') = x^T S0 x' with fixed prior covariance S0.

    Used to verify GP posteriors against the Bayesian linear-regression
    closed form; it carries no trainable parameters.
    """

    def __init__(self, prior_cov=None):
        self.prior_cov = None if prior_cov is None else np.asarray(
            prior_cov, dtype=np.float64)

    def _project(self, X):
        return X if self.prior_cov is None else X @ self.prior_cov

    def __call__(self, X, Z=None):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Z = X if Z is None else np.atleast_2d(np.asarray(Z, dtype=np.float64))
        if X.shape[1] != Z.shape[1]:
            raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Z.shape[1]}")
        return self._project(X) @ Z.T

    def diag(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.einsum("ij,ij->i", self._project(X), X)

    def clone(self):
        return LinearKernel(None if self.prior_cov is None else self.prior_cov.copy())

    def __repr__(self):
        return f"LinearKernel(prior_cov={self.prior_cov!r})"


def kernel_eval(kernel: Kernel, x, z):
    """Evaluate k(x, z) for two single points."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if x.shape != z.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {z.shape}")
    return float(kernel(x[None, :], z[None, :])[0, 0])
