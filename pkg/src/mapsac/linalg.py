"""Dense symmetric linear algebra, chi-square quantiles, and seeded RNG streams."""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import cho_solve


class NotPositiveDefinite(Exception):
    """A matrix that must be positive-definite is not."""


class ConvergenceError(Exception):
    """An iterative eigenvalue computation did not converge."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


def check_symmetric(a, rtol: float = 1e-12) -> np.ndarray:
    """Return ``a`` as a float array after validating squareness and symmetry."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 0.0)
    if a.size and float(np.max(np.abs(a - a.T))) > rtol * scale:
        raise ValueError("matrix is not symmetric")
    return a


def cholesky(a) -> np.ndarray:
    """Lower-triangular L with L @ L.T == a.

    Raises NotPositiveDefinite when a pivot is non-positive.
    """
    a = check_symmetric(a)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def solve_psd(a, b) -> np.ndarray:
    """Solve a @ x = b for positive-definite ``a`` via Cholesky."""
    return solve_chol(cholesky(a), b)


def solve_chol(lower, b) -> np.ndarray:
    """Solve with a precomputed lower Cholesky factor."""
    return cho_solve((lower, True), np.asarray(b, dtype=float))


def inv_psd(a) -> np.ndarray:
    """Explicit inverse of a positive-definite matrix."""
    return solve_psd(a, np.eye(a.shape[0] if hasattr(a, "shape") else len(a)))


def logdet_psd(a) -> float:
    """log det of a positive-definite matrix, from Cholesky diagonals."""
    return logdet_chol(cholesky(a))


def logdet_chol(lower) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(lower))))


def eig_extrema_psd(a) -> tuple[float, float]:
    """(smallest, largest) eigenvalue of a symmetric PSD matrix."""
    a = check_symmetric(a)
    try:
        w = np.linalg.eigvalsh(a)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK rarely fails here
        raise ConvergenceError(str(exc)) from exc
    return float(w[0]), float(w[-1])


# ---------------------------------------------------------------------------
# Regularized lower incomplete gamma, written out as the classic series /
# continued-fraction pair so the quantile routine has no special-function
# dependency and can be cross-checked against scipy in the tests.

_GAMMA_EPS = 1e-15
_GAMMA_MAX_ITER = 600


def _gamma_series(a: float, x: float) -> float:
    # P(a, x) by power series, valid for x < a + 1
    ap = a
    total = 1.0 / a
    term = total
    for _ in range(_GAMMA_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_contfrac(a: float, x: float) -> float:
    # Q(a, x) by modified Lentz continued fraction, valid for x >= a + 1
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    frac = d
    for i in range(1, _GAMMA_MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        frac *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return frac * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0.0:
        raise DomainError("shape parameter must be positive")
    if x < 0.0:
        raise DomainError("argument must be non-negative")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_contfrac(a, x)


def chi2_cdf(x: float, d: int) -> float:
    """CDF of the chi-square distribution with ``d`` degrees of freedom."""
    if d < 1:
        raise DomainError("degrees of freedom must be >= 1")
    if x <= 0.0:
        return 0.0
    return gammainc_lower(0.5 * d, 0.5 * x)


def chi2_quantile(d: int, p: float) -> float:
    """Quantile of the chi-square distribution, by bisection on the CDF.

    Accurate to CDF error below 1e-6 for the degrees of freedom used here.
    """
    if d < 1:
        raise DomainError("degrees of freedom must be >= 1")
    if not 0.0 < p < 1.0:
        raise DomainError("probability must lie strictly between 0 and 1")
    lo = 0.0
    hi = d + 10.0 * math.sqrt(2.0 * d) + 10.0
    while chi2_cdf(hi, d) < p:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, d) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Random streams. One Generator per logical stream, never shared; PCG64 keeps
# identical seeds giving identical streams across runs and platforms.


def make_rng(seed: int) -> np.random.Generator:
    """Seeded random generator (PCG64 bit stream, ziggurat normals)."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """``n`` independent child streams derived deterministically from ``seed``."""
    seq = np.random.SeedSequence(int(seed))
    return [np.random.Generator(np.random.PCG64(child)) for child in seq.spawn(n)]
