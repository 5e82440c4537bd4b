"""Barrier functions for circular obstacles and the per-step constraint builders.

Each builder emits one affine-in-u inequality a . u + b >= 0 for the QP. The
four methods differ only in how they fill the uncertainty slot:

* ``opt``     exact residual (simulation oracle, perfect knowledge)
* ``rust``    negative worst-case envelope of the residual (no learning)
* ``gp2``     pessimistic bound mean - beta * std from a GP model
* ``mapsac``  the same pessimistic bound from a meta-learned adaptive model
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import DomainError, chi2_quantile, eig_extrema_psd, logdet_psd


class ModelMissing(ValueError):
    """A learned-model method was requested without a model instance."""


METHODS = ("opt", "rust", "gp2", "mapsac")


@dataclass(frozen=True)
class Obstacle:
    """Circular keep-out region."""

    cx: float
    cy: float
    radius: float

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("obstacle radius must be positive")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])


def barrier(x, obstacle: Obstacle) -> tuple[float, np.ndarray]:
    """Barrier value and gradient: squared distance to the center minus r^2."""
    x = np.asarray(x, dtype=float)
    diff = x - obstacle.center
    h = float(diff @ diff - obstacle.radius ** 2)
    return h, 2.0 * diff


def lie_terms(x, obstacle: Obstacle, dynamics) -> tuple[float, np.ndarray]:
    """Directional derivatives of the barrier along the known dynamics.

    ``dynamics`` provides drift ``f(x)`` and input matrix ``g(x)``. For the
    moving point f is zero and g the identity, so the input term reduces to
    the barrier gradient.
    """
    _, grad = barrier(x, obstacle)
    lfh = float(grad @ dynamics.f(x))
    lgh = grad @ dynamics.g(x)
    return lfh, lgh


def residual_true(x, omega: float, obstacle: Obstacle) -> float:
    """Exact barrier residual induced by the unknown drift (oracle only)."""
    x = np.asarray(x, dtype=float)
    _, grad = barrier(x, obstacle)
    drift = -omega * (np.cos(x[0]) + np.sin(x[1])) * np.ones(2)
    return float(grad @ drift)


def rust_bound(x, obstacle: Obstacle, omega_max: float = 2.5,
               mode: str = "structural",
               bounds_lo=None, bounds_hi=None) -> float:
    """Worst-case envelope dominating |residual| over the uncertainty class.

    ``structural`` keeps the state-dependent trigonometric factor; ``constant``
    replaces the barrier-gradient factor with its supremum over the scenario
    box, which is cruder but state-light.
    """
    x = np.asarray(x, dtype=float)
    trig = abs(np.cos(x[0]) + np.sin(x[1]))
    if mode == "structural":
        _, grad = barrier(x, obstacle)
        return omega_max * trig * float(np.sum(np.abs(grad)))
    if mode == "constant":
        lo = np.asarray(bounds_lo if bounds_lo is not None else (-1.0, -1.0), dtype=float)
        hi = np.asarray(bounds_hi if bounds_hi is not None else (5.0, 5.0), dtype=float)
        reach = np.maximum(np.abs(lo - obstacle.center), np.abs(hi - obstacle.center))
        return omega_max * 2.0 * float(np.sum(2.0 * reach))
    raise ValueError(f"unknown worst-case bound mode {mode!r}")


@dataclass
class SafetyBudget:
    """Probability budget and confidence multiplier for the pessimistic bound.

    ``mode`` is either ``fixed_beta`` (use ``beta`` as given) or ``theorem``
    (inflate ``beta`` to at least the confidence-set radius).
    """

    beta: float = 1.96
    mode: str = "fixed_beta"
    delta: float = 0.05
    kappa: float = 1.0
    delta_tilde: float | None = None

    def resolved_delta_tilde(self) -> float:
        dt = self.delta / self.kappa if self.delta_tilde is None else self.delta_tilde
        if not 0.0 < dt < 1.0:
            raise DomainError("delta_tilde must lie strictly between 0 and 1")
        return dt


def confidence_radius(prior_cov: np.ndarray, posterior_cov: np.ndarray,
                      delta_tilde: float, chi2_value: float | None = None) -> float:
    """Radius of the weight confidence set, in noise-scale units.

    sqrt(2 log(det ratio / delta)) plus the calibrated-prior term scaled by
    the eigenvalue ratio of posterior to prior covariance. ``chi2_value`` may
    carry a precomputed chi-square quantile for tight loops.
    """
    if not 0.0 < delta_tilde < 1.0:
        raise DomainError("delta_tilde must lie strictly between 0 and 1")
    d = prior_cov.shape[0]
    log_ratio = 0.5 * (logdet_psd(prior_cov) - logdet_psd(posterior_cov))
    term1 = np.sqrt(2.0 * (log_ratio - np.log(delta_tilde)))
    lmin0, _ = eig_extrema_psd(prior_cov)
    _, lmax_t = eig_extrema_psd(posterior_cov)
    if chi2_value is None:
        chi2_value = chi2_quantile(d, 1.0 - delta_tilde)
    term2 = np.sqrt(lmax_t / lmin0 * chi2_value)
    return float(term1 + term2)


def beta_for(budget: SafetyBudget, gamma: float | None = None) -> float:
    """Confidence multiplier under the budget; ``gamma`` is the current radius."""
    if budget.mode == "fixed_beta":
        return float(budget.beta)
    if budget.mode == "theorem":
        if gamma is None:
            raise ValueError("theorem mode needs the confidence radius")
        return float(max(budget.beta, gamma))
    raise ValueError(f"unknown budget mode {budget.mode!r}")


@dataclass
class ConstraintSpec:
    """One affine safety constraint a . u + b >= 0 with its diagnostics."""

    a: np.ndarray
    b: float
    method: str
    obstacle_index: int = 0
    h: float = np.nan
    mu: float = np.nan
    sigma: float = np.nan
    beta_sigma: float = np.nan

    def value(self, u) -> float:
        return float(self.a @ np.asarray(u, dtype=float) + self.b)


def build_constraint(method: str, x, obstacle: Obstacle, dynamics,
                     alpha_gain: float = 1.0,
                     budget: SafetyBudget | None = None,
                     model=None, omega_true: float | None = None,
                     omega_max: float = 2.5, rust_mode: str = "structural",
                     gamma: float | None = None,
                     obstacle_index: int = 0) -> ConstraintSpec:
    """Assemble the barrier constraint for one obstacle under one method."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    h, _ = barrier(x, obstacle)
    lfh, lgh = lie_terms(x, obstacle, dynamics)
    base = lfh + alpha_gain * h
    mu = np.nan
    sigma = np.nan
    beta_sigma = np.nan
    if method == "opt":
        if omega_true is None:
            raise ValueError("opt method needs the true environment parameter")
        mu = residual_true(x, omega_true, obstacle)
        sigma = 0.0
        beta_sigma = 0.0
        uncertainty = mu
    elif method == "rust":
        mu = -rust_bound(x, obstacle, omega_max=omega_max, mode=rust_mode)
        sigma = 0.0
        beta_sigma = 0.0
        uncertainty = mu
    else:
        if model is None:
            raise ModelMissing(f"method {method!r} needs a learned model")
        budget = budget or SafetyBudget()
        mu, sigma = model.predict_point(x)
        beta = beta_for(budget, gamma)
        beta_sigma = beta * sigma
        uncertainty = mu - beta_sigma
    return ConstraintSpec(a=lgh, b=base + uncertainty, method=method,
                          obstacle_index=obstacle_index, h=h, mu=mu,
                          sigma=sigma, beta_sigma=beta_sigma)
