"""Scenario definitions for the moving-point experiments, plus config files.

Config files are flat ``section.key = value`` text; every key must be in the
schema below, otherwise parsing fails. Silent typos in experiment configs are
worse than a hard error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .safety import Obstacle


class ConfigError(ValueError):
    """Unknown key or unparseable value in a config file."""


@dataclass(frozen=True)
class ScenarioSpec:
    """One experiment setup: current-task obstacles plus the meta-task family."""

    name: str
    obstacles: tuple[Obstacle, ...]
    n_features: int
    n_meta_tasks: int
    samples_per_task: int = 30
    random_meta_obstacles: bool = False
    omega_true: float = 1.5
    start: tuple[float, float] = (0.0, 0.0)
    target: tuple[float, float] = (3.0, 4.0)
    bounds_lo: tuple[float, float] = (-1.0, -1.0)
    bounds_hi: tuple[float, float] = (5.0, 5.0)

    def sample_meta_obstacles(self, rng: np.random.Generator) -> list[Obstacle]:
        """Obstacle layout for one historical task."""
        if not self.random_meta_obstacles:
            return list(self.obstacles)
        cx = rng.uniform(1.0, 4.0)
        cy = rng.uniform(1.0, 4.0)
        r = rng.uniform(0.2, 1.0)
        return [Obstacle(cx, cy, r)]


_FIXED = ScenarioSpec(
    name="fixed-obstacle",
    obstacles=(Obstacle(1.5, 1.5, 0.8),),
    n_features=10,
    n_meta_tasks=20,
)

_UNCERTAIN = ScenarioSpec(
    name="uncertain-obstacle",
    obstacles=(Obstacle(1.0, 2.5, 1.2),),
    n_features=20,
    n_meta_tasks=50,
    random_meta_obstacles=True,
)

_MULTI = ScenarioSpec(
    name="multi-obstacle",
    obstacles=(Obstacle(1.0, 2.5, 1.0), Obstacle(3.0, 2.0, 0.5), Obstacle(2.5, 0.5, 0.8)),
    n_features=20,
    n_meta_tasks=50,
    random_meta_obstacles=True,
)

_ILLUSTRATE = ScenarioSpec(
    name="illustrate",
    obstacles=(Obstacle(1.5, 1.5, 0.8),),
    n_features=10,
    n_meta_tasks=20,
)

SCENARIOS: dict[str, ScenarioSpec] = {
    "fixed-obstacle": _FIXED,
    "uncertain-obstacle": _UNCERTAIN,
    "multi-obstacle": _MULTI,
    "illustrate": _ILLUSTRATE,
    # numeric aliases for the three experiment scenarios
    "1": _FIXED,
    "2": _UNCERTAIN,
    "3": _MULTI,
}


def get_scenario(name: str) -> ScenarioSpec:
    try:
        return SCENARIOS[name]
    except KeyError:
        valid = ", ".join(sorted(k for k in SCENARIOS if not k.isdigit()))
        raise ConfigError(f"unknown scenario {name!r}; expected one of {valid}") from None


# ---------------------------------------------------------------------------
# Config files

def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


CONFIG_SCHEMA: dict[str, type] = {
    "sim.dt": float,
    "sim.process_noise_std": float,
    "sim.obs_noise_variance": float,
    "sim.sample_every": int,
    "sim.residual_mode": str,          # oracle | finite_diff
    "sim.nominal_gain": float,
    "run.n_steps": int,
    "run.settle_dist": float,
    "run.u_min": float,
    "run.u_max": float,
    "qp.slack_penalty": float,
    "safety.alpha_gain": float,
    "safety.beta": float,
    "safety.beta_mode": str,           # fixed_beta | theorem
    "safety.delta_tilde": float,
    "safety.omega_max": float,
    "safety.rust_bound": str,          # structural | constant
    "ablr.k0_scale": float,
    "ablr.noise_variance": float,
    "ablr.finetune_steps": int,
    "ablr.finetune_step_size": float,
    "gp.n_starts": int,
    "gp.n_steps": int,
    "gp.refit_steps": int,
    "meta.epochs": int,
    "meta.step_size": float,
    "meta.step_size_prior": float,
    "meta.step_decay": float,
    "meta.context_fraction": float,
    "meta.conditioning": str,          # split | full
    "meta.n_tasks": int,
    "meta.samples_per_task": int,
    "meta.hidden": int,
}

_ALLOWED_STRINGS = {
    "sim.residual_mode": ("oracle", "finite_diff"),
    "safety.beta_mode": ("fixed_beta", "theorem"),
    "safety.rust_bound": ("structural", "constant"),
    "meta.conditioning": ("split", "full"),
}


def parse_config(text: str) -> dict:
    """Parse config text into a validated {key: typed value} dict."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        caster = CONFIG_SCHEMA[key]
        try:
            parsed = _parse_bool(val) if caster is bool else caster(val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
        if key in _ALLOWED_STRINGS and parsed not in _ALLOWED_STRINGS[key]:
            raise ConfigError(
                f"line {lineno}: {key} must be one of {_ALLOWED_STRINGS[key]}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = parsed
    return values


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
