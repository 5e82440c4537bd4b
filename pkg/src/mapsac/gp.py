"""Exact Gaussian-process regression with a Matern 5/2 kernel.

This is the no-meta baseline learner: constant mean, shared isotropic
lengthscale, fixed Gaussian observation noise. Hyperparameters are chosen by
multi-start gradient ascent on the log marginal likelihood in log-space, with
box bounds to keep tiny datasets from driving the marginal likelihood into
pathological corners.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin

from .linalg import NotPositiveDefinite, cholesky, make_rng, solve_chol
from .optim import Adam

SQRT5 = np.sqrt(5.0)

_MAX_JITTER = 1e-6


def _pairwise_dist(x, x2) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x2 = np.atleast_2d(np.asarray(x2, dtype=float))
    diff = x[:, None, :] - x2[None, :, :]
    return np.sqrt(np.maximum(np.sum(diff * diff, axis=-1), 0.0))


def matern52(x, x2, lengthscale: float, variance: float):
    """Matern 5/2 covariance between rows of ``x`` and ``x2``.

    Scalars come back for a pair of single points.
    """
    if lengthscale <= 0.0 or variance <= 0.0:
        raise ValueError("lengthscale and variance must be positive")
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    single = x.ndim == 1 and x2.ndim == 1
    r = _pairwise_dist(x, x2)
    a = SQRT5 * r / lengthscale
    k = variance * (1.0 + a + a * a / 3.0) * np.exp(-a)
    return float(k[0, 0]) if single else k


def _matern52_grad_log_ell(r: np.ndarray, lengthscale: float, variance: float) -> np.ndarray:
    # d k / d log(lengthscale)
    a = SQRT5 * r / lengthscale
    return variance * np.exp(-a) * a * a * (1.0 + a) / 3.0


def chol_with_jitter(k: np.ndarray) -> np.ndarray:
    """Cholesky of a kernel matrix, escalating diagonal jitter up to 1e-6."""
    jitter = 0.0
    while True:
        try:
            return cholesky(k + jitter * np.eye(k.shape[0]))
        except NotPositiveDefinite:
            jitter = 1e-10 if jitter == 0.0 else jitter * 10.0
            if jitter > _MAX_JITTER:
                raise


def exact_posterior(k_train: np.ndarray, k_cross: np.ndarray, k_diag: np.ndarray,
                    y_centered: np.ndarray, noise_variance: float):
    """Exact GP posterior given kernel blocks.

    ``k_cross`` has shape (n_test, n_train); ``k_diag`` is the prior variance
    at the test points. Returns the mean offset from the prior mean and the
    latent (noise-free) posterior variance, clipped at zero.
    """
    chol = chol_with_jitter(k_train + noise_variance * np.eye(k_train.shape[0]))
    alpha = solve_chol(chol, y_centered)
    mean = k_cross @ alpha
    tmp = solve_triangular(chol, k_cross.T, lower=True)
    var = np.maximum(k_diag - np.sum(tmp * tmp, axis=0), 0.0)
    return mean, var


class MaternGpRegressor(RegressorMixin, BaseEstimator):
    """GP regressor with constant mean and fixed observation noise.

    Parameters
    ----------
    noise_variance : float
        Fixed Gaussian likelihood variance.
    n_starts, n_steps : int
        Multi-start budget for the marginal-likelihood ascent on a full fit.
    refit_steps : int
        Step cap for warm refits triggered by ``partial_fit``; those restart
        from the current hyperparameters only.
    seed : int
        Seeds the extra optimizer starts.
    """

    def __init__(self, noise_variance: float = 0.1, n_starts: int = 8,
                 n_steps: int = 200, step_size: float = 0.05,
                 refit_steps: int = 25, seed: int = 0,
                 lengthscale_bounds: tuple[float, float] = (1e-2, 1e2),
                 signal_bounds: tuple[float, float] = (1e-4, 1e4),
                 mean_bounds: tuple[float, float] = (-10.0, 10.0)):
        self.noise_variance = noise_variance
        self.n_starts = n_starts
        self.n_steps = n_steps
        self.step_size = step_size
        self.refit_steps = refit_steps
        self.seed = seed
        self.lengthscale_bounds = lengthscale_bounds
        self.signal_bounds = signal_bounds
        self.mean_bounds = mean_bounds

    # -- hyperparameter vector: theta = (log s2, log ell, c) ------------------

    def _theta_bounds(self):
        lo = np.array([np.log(self.signal_bounds[0]), np.log(self.lengthscale_bounds[0]),
                       self.mean_bounds[0]])
        hi = np.array([np.log(self.signal_bounds[1]), np.log(self.lengthscale_bounds[1]),
                       self.mean_bounds[1]])
        return lo, hi

    def _lml_and_grad(self, theta: np.ndarray, x: np.ndarray, y: np.ndarray, r: np.ndarray):
        s2 = np.exp(theta[0])
        ell = np.exp(theta[1])
        c = theta[2]
        n = y.size
        a = SQRT5 * r / ell
        k_signal = s2 * (1.0 + a + a * a / 3.0) * np.exp(-a)
        chol = chol_with_jitter(k_signal + self.noise_variance * np.eye(n))
        resid = y - c
        alpha = solve_chol(chol, resid)
        lml = (-0.5 * float(resid @ alpha)
               - float(np.sum(np.log(np.diag(chol))))
               - 0.5 * n * np.log(2.0 * np.pi))
        k_inv = solve_chol(chol, np.eye(n))
        inner = np.outer(alpha, alpha) - k_inv
        grad = np.empty(3)
        grad[0] = 0.5 * float(np.sum(inner * k_signal))
        grad[1] = 0.5 * float(np.sum(inner * _matern52_grad_log_ell(r, ell, s2)))
        grad[2] = float(np.sum(alpha))
        return lml, grad

    def _ascend(self, theta0: np.ndarray, x: np.ndarray, y: np.ndarray,
                r: np.ndarray, n_steps: int):
        lo, hi = self._theta_bounds()
        theta = np.clip(theta0, lo, hi)
        adam = Adam(3, step_size=self.step_size)
        best_theta = theta.copy()
        best_lml = -np.inf
        stall = 0
        for _ in range(n_steps):
            lml, grad = self._lml_and_grad(theta, x, y, r)
            if best_lml == -np.inf or lml > best_lml + 1e-9 * (1.0 + abs(best_lml)):
                best_lml = lml
                best_theta = theta.copy()
                stall = 0
            else:
                stall += 1
                if stall >= 5:  # plateaued; typical for warm-started refits
                    break
            if float(np.max(np.abs(grad))) < 1e-5 * (1.0 + abs(lml)):
                break
            theta = np.clip(adam.step(theta, -grad), lo, hi)
        else:
            lml, _ = self._lml_and_grad(theta, x, y, r)
            if lml > best_lml:
                best_lml, best_theta = lml, theta.copy()
        return best_theta, best_lml

    def _optimize(self, x: np.ndarray, y: np.ndarray, starts: list[np.ndarray],
                  n_steps: int) -> None:
        r = _pairwise_dist(x, x)
        best = None
        for theta0 in starts:
            theta, lml = self._ascend(theta0, x, y, r, n_steps)
            if best is None or lml > best[1] + 1e-12:
                best = (theta, lml)
        theta, lml = best
        self.signal_variance_ = float(np.exp(theta[0]))
        self.lengthscale_ = float(np.exp(theta[1]))
        self.mean_ = float(theta[2])
        self.log_marginal_likelihood_ = float(lml)
        k = matern52(x, x, self.lengthscale_, self.signal_variance_)
        self._chol = chol_with_jitter(k + self.noise_variance * np.eye(y.size))
        self._alpha = solve_chol(self._chol, y - self.mean_)

    def _default_starts(self, y: np.ndarray) -> list[np.ndarray]:
        lo, hi = self._theta_bounds()
        c0 = float(np.clip(np.mean(y), *self.mean_bounds))
        starts = [np.array([0.0, 0.0, c0])]
        rng = make_rng(self.seed)
        for _ in range(max(0, self.n_starts - 1)):
            starts.append(rng.uniform(lo, hi))
        return starts

    # -- estimator API ---------------------------------------------------------

    def fit(self, X, y):
        """Fit hyperparameters by multi-start marginal-likelihood ascent."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if y.size == 0:
            raise ValueError("need at least one sample")
        self.X_train_ = X.copy()
        self.y_train_ = y.copy()
        self._optimize(X, y, self._default_starts(y), self.n_steps)
        return self

    def partial_fit(self, X, y):
        """Append samples and re-optimize, warm-started from the current fit."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if not hasattr(self, "X_train_"):
            return self.fit(X, y)
        self.X_train_ = np.vstack([self.X_train_, X])
        self.y_train_ = np.concatenate([self.y_train_, y])
        theta = np.array([np.log(self.signal_variance_), np.log(self.lengthscale_),
                          self.mean_])
        self._optimize(self.X_train_, self.y_train_, [theta], self.refit_steps)
        return self

    def predict(self, X, return_std: bool = False, include_noise: bool = False):
        """Posterior mean (and standard deviation) at ``X``.

        The default standard deviation is the latent one (floor at zero);
        ``include_noise`` adds the observation noise variance.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not hasattr(self, "X_train_"):
            raise RuntimeError("predict before fit; this baseline has no prior-only mode")
        k_cross = matern52(X, self.X_train_, self.lengthscale_, self.signal_variance_)
        mean = self.mean_ + k_cross @ self._alpha
        if not return_std:
            return mean
        tmp = solve_triangular(self._chol, k_cross.T, lower=True)
        var = np.maximum(self.signal_variance_ - np.sum(tmp * tmp, axis=0), 0.0)
        if include_noise:
            var = var + self.noise_variance
        return mean, np.sqrt(var)

    def predict_point(self, x) -> tuple[float, float]:
        """Mean/std at one state, noise included, for the control loop."""
        mean, std = self.predict(np.asarray(x, dtype=float)[None, :],
                                 return_std=True, include_noise=True)
        return float(mean[0]), float(std[0])

    def log_marginal_likelihood(self, theta=None) -> float:
        """Marginal likelihood at ``theta`` = (log s2, log ell, c), or the fit value."""
        if theta is None:
            return self.log_marginal_likelihood_
        r = _pairwise_dist(self.X_train_, self.X_train_)
        lml, _ = self._lml_and_grad(np.asarray(theta, dtype=float),
                                    self.X_train_, self.y_train_, r)
        return lml
