"""Moving-point plant: integration, noise, nominal control, and observations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .safety import Obstacle, residual_true


@dataclass
class MovingPointDynamics:
    """Known part of the plant: zero drift, identity input matrix."""

    def f(self, x) -> np.ndarray:
        return np.zeros(2)

    def g(self, x) -> np.ndarray:
        return np.eye(2)


@dataclass
class PlantConfig:
    """True environment parameter and simulation constants.

    ``dt`` is the control period; online model updates happen every
    ``sample_every`` steps (10 steps at dt=0.01 gives the 10 Hz sampling
    rate). ``obs_noise_variance`` is the variance of the residual
    observation noise; process noise enters the state as N(0, dt * std^2).
    """

    omega: float = 1.5
    dt: float = 0.01
    process_noise_std: float = 0.01
    obs_noise_variance: float = 0.1
    sample_every: int = 10
    target: np.ndarray = field(default_factory=lambda: np.array([3.0, 4.0]))
    nominal_gain: float = 10.0


def dynamics_rhs(x, u, omega: float) -> np.ndarray:
    """State derivative: input minus the trigonometric drift in both axes."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    drift = omega * (np.cos(x[0]) + np.sin(x[1]))
    return np.array([u[0] - drift, u[1] - drift])


def rk4_step(x, u, omega: float, dt: float) -> np.ndarray:
    """Classic fourth-order step with the input held constant."""
    x = np.asarray(x, dtype=float)
    k1 = dynamics_rhs(x, u, omega)
    k2 = dynamics_rhs(x + 0.5 * dt * k1, u, omega)
    k3 = dynamics_rhs(x + 0.5 * dt * k2, u, omega)
    k4 = dynamics_rhs(x + dt * k3, u, omega)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(x, u, cfg: PlantConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """One control period: RK4 under zero-order hold, then additive noise."""
    nxt = rk4_step(x, u, cfg.omega, cfg.dt)
    if cfg.process_noise_std > 0.0:
        if rng is None:
            raise ValueError("process noise requires an rng")
        nxt = nxt + rng.normal(0.0, cfg.process_noise_std * np.sqrt(cfg.dt), size=2)
    return nxt


def observe_residual(x, obstacle: Obstacle, cfg: PlantConfig,
                     rng: np.random.Generator | None = None) -> float:
    """Noisy residual observation: oracle value plus Gaussian noise.

    The additive Gaussian satisfies the sub-Gaussian noise model exactly and
    avoids the discretization bias a finite-difference estimate would carry.
    """
    value = residual_true(x, cfg.omega, obstacle)
    if cfg.obs_noise_variance > 0.0:
        if rng is None:
            raise ValueError("observation noise requires an rng")
        value += rng.normal(0.0, np.sqrt(cfg.obs_noise_variance))
    return float(value)


def finite_difference_residual(h_next: float, h_prev: float, lfh: float,
                               lgh, u, dt: float) -> float:
    """Residual estimate from the measured barrier rate (realism mode)."""
    hdot = (h_next - h_prev) / dt
    return float(hdot - lfh - np.asarray(lgh) @ np.asarray(u, dtype=float))


def nominal_input(x, cfg: PlantConfig) -> np.ndarray:
    """Proportional pull toward the target, unsaturated (the QP box clips)."""
    return -cfg.nominal_gain * (np.asarray(x, dtype=float) - cfg.target)


def conic_states(n: int, rng: np.random.Generator) -> np.ndarray:
    """States on the known safe arc x2 = 1.2 (x1 - 1.5)^2 + 0.3, x1 ~ U(0.3, 1.5)."""
    x1 = rng.uniform(0.3, 1.5, size=n)
    x2 = 1.2 * (x1 - 1.5) ** 2 + 0.3
    return np.column_stack([x1, x2])


def warmstart_samples(obstacles, cfg: PlantConfig, rng: np.random.Generator,
                      n: int = 20):
    """Warm-start dataset: ``n`` conic states with one noisy residual per obstacle.

    Returns (states, targets) where targets has one column per obstacle.
    """
    states = conic_states(n, rng)
    targets = np.empty((n, len(obstacles)))
    for j, obs in enumerate(obstacles):
        for i in range(n):
            targets[i, j] = observe_residual(states[i], obs, cfg, rng)
    return states, targets
