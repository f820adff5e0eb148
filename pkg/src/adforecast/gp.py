"""Exact Gaussian-process regression with a constant prior mean.

The posterior at a query point x* is

    mean(x*) = m + k(x*, X) (K + s2 I)^-1 (y - m)
    var(x*)  = k(x*, x*) - k(x*, X) (K + s2 I)^-1 k(X, x*)

computed through a Cholesky factor of K + s2 I. When the factorization
fails, a jitter term escalates from 1e-10 tr(K)/N by factors of 10 up to
1e-4 tr(K)/N before giving up. Hyperparameters (kernel parameters and the
noise variance) can be refined by deterministic gradient ascent on the log
marginal likelihood over their logs.

``blr_posterior`` provides the closed-form Bayesian linear-regression
posterior used as an independent cross-check of the GP equations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin

from .kernels import Kernel, LinearKernel, RBFKernel
from .validation import check_matrix, check_vector

JITTER_START = 1e-10
JITTER_MAX = 1e-4
VARIANCE_SLACK = 1e-10

SERIAL_FORMAT = "adforecast-gp-v1"


class NumericalError(RuntimeError):
    """Raised when linear algebra breaks down beyond the jitter policy."""


def _chol_with_jitter(A, scale):
    """Cholesky of A, escalating additive jitter on failure.

    ``scale`` sets the jitter unit (trace/N of the kernel block). Returns
    (L, jitter). Raises :class:`NumericalError` at the jitter ceiling.
    """
    jitter = 0.0
    unit = scale if scale > 0 else 1.0
    while True:
        try:
            M = A if jitter == 0.0 else A + jitter * np.eye(A.shape[0])
            return cholesky(M, lower=True), jitter
        except np.linalg.LinAlgError:
            pass
        if jitter == 0.0:
            jitter = JITTER_START * unit
        elif jitter < JITTER_MAX * unit:
            jitter = min(jitter * 10.0, JITTER_MAX * unit)
        else:
            raise NumericalError(
                "kernel matrix not positive definite even with jitter "
                f"{JITTER_MAX:g} * trace/N") from None


class ExactGPRegressor(BaseEstimator, RegressorMixin):
    """Exact GP regression with optional evidence-based hyperparameter ascent.

    Parameters
    ----------
    kernel : Kernel or None
        Covariance function. ``None`` selects an isotropic RBF kernel with
        variance var(y) and lengthscale sqrt(D) at fit time.
    noise_variance : float or "auto"
        Observation noise s2; "auto" means 0.1 * var(y).
    prior_mean : float or "auto"
        Constant prior mean; "auto" means mean(y) (0 for an empty fit).
    optimize : bool
        Refine hyperparameters by gradient ascent on the log marginal
        likelihood before factorizing.
    max_iter, grad_tol : optimizer budget and gradient infinity-norm stop.

    The fitted state is immutable; predictions may be issued concurrently.
    """

    def __init__(self, kernel=None, noise_variance="auto", prior_mean="auto",
                 optimize=False, max_iter=100, grad_tol=1e-6):
        self.kernel = kernel
        self.noise_variance = noise_variance
        self.prior_mean = prior_mean
        self.optimize = optimize
        self.max_iter = max_iter
        self.grad_tol = grad_tol

    # -- fitting -----------------------------------------------------------

    def fit(self, X, y):
        X = check_matrix(X, allow_empty=True)
        y = check_vector(y, length=X.shape[0], allow_empty=True)
        n = X.shape[0]

        y_var = float(np.var(y)) if n > 1 else 1.0
        y_var = y_var if y_var > 0 else 1.0
        if self.kernel is None:
            kernel = RBFKernel(variance=y_var, lengthscale=np.sqrt(X.shape[1]))
        else:
            kernel = self.kernel.clone()
        if self.noise_variance == "auto":
            noise = 0.1 * y_var
        else:
            noise = float(self.noise_variance)
            if noise < 0:
                raise ValueError(f"noise_variance must be >= 0, got {noise}")
        if self.prior_mean == "auto":
            mean = float(np.mean(y)) if n else 0.0
        else:
            mean = float(self.prior_mean)

        if self.optimize and n:
            kernel, noise = _maximize_evidence(
                X, y, kernel, noise, mean, self.max_iter, self.grad_tol)

        self.kernel_ = kernel
        self.noise_variance_ = noise
        self.prior_mean_ = mean
        self.X_train_ = X
        self.y_train_ = y
        self._factorize()
        return self

    def _factorize(self):
        n = self.X_train_.shape[0]
        if n == 0:
            self.L_ = np.zeros((0, 0))
            self.alpha_ = np.zeros(0)
            self.jitter_ = 0.0
            return
        K = self.kernel_(self.X_train_)
        A = K + self.noise_variance_ * np.eye(n)
        self.L_, self.jitter_ = _chol_with_jitter(A, float(np.trace(K)) / n)
        self.alpha_ = cho_solve((self.L_, True), self.y_train_ - self.prior_mean_)

    @property
    def is_fitted(self):
        return hasattr(self, "L_")

    def gram_reconstruction_error(self):
        """Relative error of L L^T against K + s2 I (+ jitter)."""
        n = self.X_train_.shape[0]
        A = (self.kernel_(self.X_train_)
             + (self.noise_variance_ + self.jitter_) * np.eye(n))
        return float(np.linalg.norm(self.L_ @ self.L_.T - A)
                     / max(np.linalg.norm(A), 1e-300))

    # -- prediction --------------------------------------------------------

    def predict(self, X, return_var=False):
        X = check_matrix(X)
        if self.X_train_.shape[0] and X.shape[1] != self.X_train_.shape[1]:
            raise ValueError(f"query dimension {X.shape[1]} != training "
                             f"dimension {self.X_train_.shape[1]}")
        if self.X_train_.shape[0] == 0:
            mean = np.full(X.shape[0], self.prior_mean_)
            var = self.kernel_.diag(X).astype(np.float64)
        else:
            k_star = self.kernel_(X, self.X_train_)
            mean = self.prior_mean_ + k_star @ self.alpha_
            v = solve_triangular(self.L_, k_star.T, lower=True)
            var = self.kernel_.diag(X) - np.einsum("ij,ij->j", v, v)
        # slack is relative to the prior-variance scale (equals the absolute
        # 1e-10 threshold at unit kernel variance)
        slack = VARIANCE_SLACK * np.maximum(1.0, self.kernel_.diag(X))
        if np.any(var < -slack):
            raise NumericalError(
                f"negative predictive variance {var.min():.3e} signals "
                "numerical breakdown")
        var = np.maximum(var, 0.0)
        return (mean, var) if return_var else mean

    def predict_point(self, x):
        """(mean, variance) at a single query point."""
        mean, var = self.predict(np.atleast_2d(x), return_var=True)
        return float(mean[0]), float(var[0])

    # -- evidence ----------------------------------------------------------

    def log_marginal_likelihood(self, eval_gradient=False):
        """Evidence log p(y | X) at the fitted hyperparameters.

        The gradient is taken with respect to the log-scale vector
        [kernel theta..., log noise_variance].
        """
        n = self.X_train_.shape[0]
        if n == 0:
            value = 0.0
            if not eval_gradient:
                return value
            return value, np.zeros(self.kernel_.theta.size + 1)
        resid = self.y_train_ - self.prior_mean_
        value = (-0.5 * float(resid @ self.alpha_)
                 - float(np.sum(np.log(np.diag(self.L_))))
                 - 0.5 * n * np.log(2.0 * np.pi))
        if not eval_gradient:
            return value
        A_inv = cho_solve((self.L_, True), np.eye(n))
        M = np.outer(self.alpha_, self.alpha_) - A_inv
        K = self.kernel_(self.X_train_)
        grads = self.kernel_.gradient(self.X_train_, K)
        g = [0.5 * float(np.sum(M * grads[..., i]))
             for i in range(grads.shape[-1])]
        g.append(0.5 * self.noise_variance_ * float(np.trace(M)))
        return value, np.array(g)

    # -- conditioning ------------------------------------------------------

    def condition_on(self, X_new, y_new):
        """Posterior additionally conditioned on (X_new, y_new).

        Hyperparameters (kernel, noise, prior mean) are shared with this
        model; the Cholesky factor is extended by a block update, so the
        result is the exact joint GP over training set + new points. With
        empty inputs the returned model is equivalent to this one.
        """
        X_new = check_matrix(X_new, allow_empty=True)
        y_new = check_vector(y_new, length=X_new.shape[0], allow_empty=True)
        if X_new.shape[0] and self.X_train_.shape[0] \
                and X_new.shape[1] != self.X_train_.shape[1]:
            raise ValueError(f"history dimension {X_new.shape[1]} != training "
                             f"dimension {self.X_train_.shape[1]}")

        out = ExactGPRegressor(kernel=self.kernel_, noise_variance=self.noise_variance_,
                               prior_mean=self.prior_mean_, optimize=False,
                               max_iter=self.max_iter, grad_tol=self.grad_tol)
        out.kernel_ = self.kernel_.clone()
        out.noise_variance_ = self.noise_variance_
        out.prior_mean_ = self.prior_mean_

        if X_new.shape[0] == 0:
            out.X_train_ = self.X_train_
            out.y_train_ = self.y_train_
            out.L_ = self.L_
            out.alpha_ = self.alpha_
            out.jitter_ = self.jitter_
            return out

        n, m = self.X_train_.shape[0], X_new.shape[0]
        out.X_train_ = np.vstack([self.X_train_, X_new]) if n else X_new
        out.y_train_ = np.concatenate([self.y_train_, y_new])
        if n == 0:
            out._factorize()
            return out

        B = self.kernel_(self.X_train_, X_new)                     # (n, m)
        D = (self.kernel_(X_new)
             + (self.noise_variance_ + self.jitter_) * np.eye(m))
        L21 = solve_triangular(self.L_, B, lower=True).T           # (m, n)
        S = D - L21 @ L21.T
        L22, extra = _chol_with_jitter(S, float(np.trace(D)) / m)
        L = np.zeros((n + m, n + m))
        L[:n, :n] = self.L_
        L[n:, :n] = L21
        L[n:, n:] = L22
        out.L_ = L
        out.jitter_ = self.jitter_
        resid = out.y_train_ - self.prior_mean_
        out.alpha_ = solve_triangular(
            L, solve_triangular(L, resid, lower=True), lower=True, trans=1)
        return out

    # -- persistence -------------------------------------------------------

    def save(self, path):
        """Serialize hyperparameters and training data; the factor is
        recomputed on load."""
        k = self.kernel_
        if isinstance(k, RBFKernel):
            kern = dict(kernel_kind="rbf",
                        kernel_variance=k.variance,
                        kernel_lengthscale=np.atleast_1d(k.lengthscale),
                        kernel_ard=k.is_ard)
        elif isinstance(k, LinearKernel):
            kern = dict(kernel_kind="linear",
                        kernel_prior_cov=(np.empty(0) if k.prior_cov is None
                                          else k.prior_cov))
        else:
            raise ValueError(f"cannot serialize kernel {type(k).__name__}")
        np.savez(path, format=SERIAL_FORMAT,
                 noise_variance=self.noise_variance_,
                 prior_mean=self.prior_mean_,
                 X_train=self.X_train_, y_train=self.y_train_, **kern)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as data:
            fmt = str(data["format"])
            if fmt != SERIAL_FORMAT:
                raise ValueError(f"unsupported model format {fmt!r}")
            kind = str(data["kernel_kind"])
            if kind == "rbf":
                ls = data["kernel_lengthscale"]
                kernel = RBFKernel(float(data["kernel_variance"]),
                                   ls if bool(data["kernel_ard"]) else float(ls[0]))
            elif kind == "linear":
                pc = data["kernel_prior_cov"]
                kernel = LinearKernel(None if pc.size == 0 else pc)
            else:
                raise ValueError(f"unsupported kernel kind {kind!r}")
            model = cls(kernel=kernel,
                        noise_variance=float(data["noise_variance"]),
                        prior_mean=float(data["prior_mean"]))
            return model.fit(data["X_train"], data["y_train"])


def _lml_at(X, y, kernel, log_noise, mean):
    """(value, gradient) of the evidence at the given log-scale parameters."""
    model = ExactGPRegressor(kernel=kernel, noise_variance=float(np.exp(log_noise)),
                             prior_mean=mean)
    model.fit(X, y)
    return model.log_marginal_likelihood(eval_gradient=True)


def _maximize_evidence(X, y, kernel, noise, mean, max_iter, grad_tol):
    """Deterministic gradient ascent with backtracking on log-hyperparameters.

    Returns (kernel, noise) with evidence >= the initial evidence; stops at
    the gradient tolerance, the iteration budget, or a failed line search.
    """
    kernel = kernel.clone()
    theta = np.r_[kernel.theta, np.log(noise) if noise > 0 else -46.0]

    def split(t):
        k = kernel.clone()
        k.theta = t[:-1]
        return k, t[-1]

    k0, ln0 = split(theta)
    value, grad = _lml_at(X, y, k0, ln0, mean)
    if not np.isfinite(value):
        raise NumericalError("non-finite log marginal likelihood at the "
                             "initial hyperparameters")
    step = 1.0
    for _ in range(int(max_iter)):
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        if gnorm < grad_tol:
            break
        direction = grad / max(np.max(np.abs(grad)), 1e-300)
        t = step
        accepted = False
        while t >= 1e-12:
            cand = theta + t * direction
            try:
                k_c, ln_c = split(cand)
                v_c, g_c = _lml_at(X, y, k_c, ln_c, mean)
            except NumericalError:
                v_c = -np.inf
            if np.isfinite(v_c) and v_c > value:
                theta, value, grad = cand, v_c, g_c
                step = min(t * 2.0, 1.0)
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
    kernel, log_noise = split(theta)
    return kernel, float(np.exp(log_noise))


@dataclass
class BLRPosterior:
    """Gaussian posterior N(m_N, S_N) over linear-model weights."""
    m_N: np.ndarray
    S_N: np.ndarray

    def predict(self, Phi):
        """Latent predictive (mean, variance) at feature rows ``Phi``."""
        Phi = check_matrix(Phi)
        mean = Phi @ self.m_N
        var = np.einsum("ij,ij->i", Phi @ self.S_N, Phi)
        return mean, var


def blr_posterior(Phi, y, m0, S0, noise_variance) -> BLRPosterior:
    """Closed-form Bayesian linear-regression posterior.

    S_N = (S0^-1 + PhiT Phi / s2)^-1 and m_N = S_N (S0^-1 m0 + PhiT y / s2).
    With no data the posterior equals the prior.
    """
    Phi = check_matrix(Phi, allow_empty=True)
    y = check_vector(y, length=Phi.shape[0], allow_empty=True)
    m0 = check_vector(m0, length=Phi.shape[1])
    S0 = check_matrix(S0)
    if S0.shape != (m0.size, m0.size):
        raise ValueError(f"S0 must be {m0.size}x{m0.size}, got {S0.shape}")
    if noise_variance <= 0:
        raise ValueError(f"noise_variance must be > 0, got {noise_variance}")
    try:
        L0 = cholesky(S0, lower=True)
    except np.linalg.LinAlgError:
        raise ValueError("prior covariance S0 is not symmetric positive "
                         "definite") from None
    S0_inv = cho_solve((L0, True), np.eye(m0.size))
    precision = S0_inv + (Phi.T @ Phi) / noise_variance
    Lp = cholesky(precision, lower=True)
    S_N = cho_solve((Lp, True), np.eye(m0.size))
    S_N = 0.5 * (S_N + S_N.T)
    m_N = cho_solve((Lp, True), S0_inv @ m0 + Phi.T @ y / noise_variance)
    return BLRPosterior(m_N, S_N)
