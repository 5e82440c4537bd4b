"""Bayesian linear regression on learned features.

The model keeps a Gaussian over the output-layer weights. Conditioning on
data is exact conjugate updating maintained through the precision matrix
(prior precision plus the running feature outer-product sums) with a fresh
Cholesky per refresh; predictions carry the observation noise floor. The
prior mean is trainable after the fact (``finetune_prior_mean``), which is
how a meta-learned model is adapted to a new task from a handful of samples.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .linalg import NotPositiveDefinite, cholesky, logdet_chol, solve_chol
from .nets import FeatureMap, InputScaler, MlpParams


class EmptyDataset(ValueError):
    """An operation that needs at least one sample got none."""


class CheckpointError(Exception):
    """Base class for checkpoint read failures."""


class CorruptCheckpoint(CheckpointError):
    """Checkpoint file is truncated or malformed."""


class VersionMismatch(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class AblrRegressor(RegressorMixin, BaseEstimator):
    """Adaptive Bayesian linear regressor over a fixed feature map.

    Parameters
    ----------
    feature_map : FeatureMap
        Maps raw states to feature vectors in (0, 1)^D.
    prior_mean : array of shape (D,)
        Mean of the Gaussian weight prior.
    prior_cov : array of shape (D, D)
        Weight prior covariance relative to the noise variance; the actual
        prior covariance is ``noise_variance * prior_cov``.
    noise_variance : float
        Fixed observation noise variance.

    The posterior is available before any data: ``predict`` then returns the
    prior predictive distribution. ``fit`` replaces the dataset,
    ``partial_fit`` appends to it.
    """

    def __init__(self, feature_map: FeatureMap, prior_mean, prior_cov,
                 noise_variance: float = 0.1):
        self.feature_map = feature_map
        self.prior_mean = prior_mean
        self.prior_cov = prior_cov
        self.noise_variance = noise_variance
        self._reset_state()

    # -- state management ---------------------------------------------------

    def _reset_state(self) -> None:
        mu0 = np.asarray(self.prior_mean, dtype=float).copy()
        k0 = np.asarray(self.prior_cov, dtype=float).copy()
        if k0.shape != (mu0.size, mu0.size):
            raise ValueError("prior_cov shape does not match prior_mean")
        if self.noise_variance <= 0.0:
            raise ValueError("noise_variance must be positive")
        self.prior_mean_ = mu0
        self.prior_cov_ = k0
        k0_chol = cholesky(k0)
        self._k0_inv = solve_chol(k0_chol, np.eye(mu0.size))
        self._sxx = np.zeros((mu0.size, mu0.size))
        self._sxy = np.zeros(mu0.size)
        self.X_train_ = np.empty((0, 0))
        self.y_train_ = np.empty(0)
        self._phi_train = np.empty((0, mu0.size))
        self.n_obs_ = 0
        self._refresh()

    def _refresh(self) -> None:
        d = self.prior_mean_.size
        if self.n_obs_ == 0:
            self.posterior_mean_ = self.prior_mean_.copy()
            self.posterior_cov_ = self.prior_cov_.copy()
            return
        precision = self._k0_inv + self._sxx
        chol = cholesky(precision)
        self.posterior_cov_ = solve_chol(chol, np.eye(d))
        self.posterior_cov_ = 0.5 * (self.posterior_cov_ + self.posterior_cov_.T)
        self.posterior_mean_ = solve_chol(chol, self._sxy + self._k0_inv @ self.prior_mean_)

    def _validated(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2:
            raise ValueError("X must be a sample matrix")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        if y is None:
            return X
        y = np.asarray(y, dtype=float).ravel()
        if y.size != X.shape[0]:
            raise ValueError("X and y have different sample counts")
        return X, y

    # -- conditioning on data -----------------------------------------------

    def fit(self, X, y):
        """Replace the dataset and recompute the posterior from scratch."""
        self._reset_state()
        X, y = self._validated(X, y)
        if X.shape[0]:
            self._absorb(X, y)
        return self

    def partial_fit(self, X, y):
        """Append samples and update the posterior; equals a batch refit."""
        X, y = self._validated(X, y)
        if X.shape[0]:
            self._absorb(X, y)
        return self

    def _absorb(self, X: np.ndarray, y: np.ndarray) -> None:
        phi = np.atleast_2d(self.feature_map(X))
        self._sxx += phi.T @ phi
        self._sxy += phi.T @ y
        if self.n_obs_ == 0:
            self.X_train_ = X.copy()
            self.y_train_ = y.copy()
            self._phi_train = phi
        else:
            self.X_train_ = np.vstack([self.X_train_, X])
            self.y_train_ = np.concatenate([self.y_train_, y])
            self._phi_train = np.vstack([self._phi_train, phi])
        self.n_obs_ += X.shape[0]
        self._refresh()

    # -- prediction ----------------------------------------------------------

    def predict(self, X, return_std: bool = False):
        """Posterior predictive mean (and standard deviation) at ``X``.

        The variance includes the observation noise, so it never drops below
        ``noise_variance``.
        """
        X = self._validated(X)
        phi = np.atleast_2d(self.feature_map(X))
        mean = phi @ self.posterior_mean_
        if not return_std:
            return mean
        quad = np.einsum("ij,jk,ik->i", phi, self.posterior_cov_, phi)
        var = self.noise_variance * (1.0 + quad)
        return mean, np.sqrt(var)

    def predict_point(self, x) -> tuple[float, float]:
        """Scalar mean/std at a single state; convenience for control loops."""
        mean, std = self.predict(np.asarray(x, dtype=float)[None, :], return_std=True)
        return float(mean[0]), float(std[0])

    # -- prior-mean fine-tuning ----------------------------------------------

    def _residual_loss_and_grad(self):
        # Squared Mahalanobis residuals of the posterior predictions at the
        # training inputs, as a function of the prior mean only (the posterior
        # covariance does not depend on it).
        phi = self._phi_train
        var = self.noise_variance * (
            1.0 + np.einsum("ij,jk,ik->i", phi, self.posterior_cov_, phi))
        resid = self.y_train_ - phi @ self.posterior_mean_
        loss = float(np.sum(resid * resid / var))
        grad = -2.0 * self._k0_inv @ self.posterior_cov_ @ (phi.T @ (resid / var))
        return loss, grad

    def finetune_prior_mean(self, n_steps: int = 100, step_size: float = 1e-2):
        """Gradient descent on the prior mean with backtracking.

        Requires at least one observed sample. The loss is non-increasing
        over accepted steps; a step that cannot decrease it ends the loop.
        """
        if self.n_obs_ == 0:
            raise EmptyDataset("prior-mean fine-tuning needs at least one sample")
        lr = float(step_size)
        loss, grad = self._residual_loss_and_grad()
        for _ in range(int(n_steps)):
            gnorm = float(np.linalg.norm(grad))
            if gnorm < 1e-12:
                break
            accepted = False
            for _ in range(40):
                candidate = self.prior_mean_ - lr * grad
                saved = self.prior_mean_
                self.prior_mean_ = candidate
                self._refresh()
                cand_loss, cand_grad = self._residual_loss_and_grad()
                if cand_loss <= loss + 1e-12:
                    loss, grad = cand_loss, cand_grad
                    accepted = True
                    lr = min(lr * 1.5, float(step_size))
                    break
                self.prior_mean_ = saved
                self._refresh()
                lr *= 0.5
            if not accepted:
                break
        return self

    def prior_loss(self) -> float:
        """Current fine-tuning loss value (diagnostic)."""
        if self.n_obs_ == 0:
            raise EmptyDataset("no samples")
        return self._residual_loss_and_grad()[0]

    # -- misc ------------------------------------------------------------------

    def posterior_logdet(self) -> float:
        return logdet_chol(cholesky(self.posterior_cov_))

    def clone_prior(self) -> "AblrRegressor":
        """Fresh estimator with the same (possibly fine-tuned) priors, no data."""
        return AblrRegressor(self.feature_map, self.prior_mean_.copy(),
                             self.prior_cov_.copy(), self.noise_variance)


# ---------------------------------------------------------------------------
# Checkpoint serialization: a single self-describing text file. Floats are
# written with repr(), which round-trips IEEE doubles exactly, so a reloaded
# model predicts bit-identically.

CHECKPOINT_TAG = "mapsac-ablr-checkpoint"
CHECKPOINT_VERSION = 1


def _write_array(fh, name: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=float)
    dims = " ".join(str(d) for d in arr.shape)
    fh.write(f"array {name} {dims}\n")
    rows = arr.reshape(1, -1) if arr.ndim == 1 else arr
    for row in rows:
        fh.write(" ".join(repr(float(v)) for v in row))
        fh.write("\n")


def save_checkpoint(path, model: AblrRegressor) -> None:
    """Write the feature map and (current) priors of ``model`` to ``path``."""
    net = model.feature_map.net
    scaler = model.feature_map.scaler
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{CHECKPOINT_TAG} {CHECKPOINT_VERSION}\n")
        fh.write(f"scalar noise_variance {repr(float(model.noise_variance))}\n")
        fh.write("ints layer_sizes " + " ".join(str(s) for s in net.layer_sizes) + "\n")
        _write_array(fh, "scaler_lo", np.asarray(scaler.lo, dtype=float))
        _write_array(fh, "scaler_hi", np.asarray(scaler.hi, dtype=float))
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            _write_array(fh, f"weight_{i}", w)
            _write_array(fh, f"bias_{i}", b)
        _write_array(fh, "prior_mean", model.prior_mean_)
        _write_array(fh, "prior_cov", model.prior_cov_)
        fh.write("end\n")


def _parse_floats(line: str, count: int, path) -> np.ndarray:
    parts = line.split()
    if len(parts) != count:
        raise CorruptCheckpoint(f"{path}: expected {count} values, got {len(parts)}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as exc:
        raise CorruptCheckpoint(f"{path}: bad float value") from exc


def load_checkpoint(path) -> AblrRegressor:
    """Reconstruct an estimator from a checkpoint file."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CorruptCheckpoint(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != CHECKPOINT_TAG:
        raise CorruptCheckpoint(f"{path}: not a checkpoint file")
    if head[1] != str(CHECKPOINT_VERSION):
        raise VersionMismatch(f"{path}: format version {head[1]} not supported")

    scalars: dict[str, float] = {}
    ints: dict[str, list[int]] = {}
    arrays: dict[str, np.ndarray] = {}
    idx = 1
    ended = False
    while idx < len(lines):
        parts = lines[idx].split()
        idx += 1
        if not parts:
            continue
        kind = parts[0]
        if kind == "end":
            ended = True
            break
        if kind == "scalar":
            if len(parts) != 3:
                raise CorruptCheckpoint(f"{path}: malformed scalar record")
            scalars[parts[1]] = float(parts[2])
        elif kind == "ints":
            ints[parts[1]] = [int(p) for p in parts[2:]]
        elif kind == "array":
            name = parts[1]
            try:
                shape = tuple(int(p) for p in parts[2:])
            except ValueError as exc:
                raise CorruptCheckpoint(f"{path}: bad array header") from exc
            if len(shape) == 1:
                if idx >= len(lines):
                    raise CorruptCheckpoint(f"{path}: truncated array {name}")
                arrays[name] = _parse_floats(lines[idx], shape[0], path)
                idx += 1
            elif len(shape) == 2:
                rows = []
                for _ in range(shape[0]):
                    if idx >= len(lines):
                        raise CorruptCheckpoint(f"{path}: truncated array {name}")
                    rows.append(_parse_floats(lines[idx], shape[1], path))
                    idx += 1
                arrays[name] = np.vstack(rows) if rows else np.empty(shape)
            else:
                raise CorruptCheckpoint(f"{path}: unsupported array rank for {name}")
        else:
            raise CorruptCheckpoint(f"{path}: unknown record kind {kind!r}")
    if not ended:
        raise CorruptCheckpoint(f"{path}: missing end marker (truncated?)")

    try:
        sizes = ints["layer_sizes"]
        weights = [arrays[f"weight_{i}"] for i in range(len(sizes) - 1)]
        biases = [arrays[f"bias_{i}"] for i in range(len(sizes) - 1)]
        scaler = InputScaler(arrays["scaler_lo"], arrays["scaler_hi"])
        prior_mean = arrays["prior_mean"]
        prior_cov = arrays["prior_cov"]
        noise_variance = scalars["noise_variance"]
    except KeyError as exc:
        raise CorruptCheckpoint(f"{path}: missing field {exc}") from exc
    for i, (w, b) in enumerate(zip(weights, biases)):
        if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
            raise CorruptCheckpoint(f"{path}: layer {i} shape mismatch")
    net = MlpParams(weights, biases)
    try:
        return AblrRegressor(FeatureMap(net, scaler), prior_mean, prior_cov,
                             noise_variance)
    except (ValueError, NotPositiveDefinite) as exc:
        raise CorruptCheckpoint(f"{path}: inconsistent checkpoint contents") from exc
