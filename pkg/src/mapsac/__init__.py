"""Probabilistically safe adaptive control with meta-learned Bayesian models.

Learners (`AblrRegressor`, `MaternGpRegressor`) follow the scikit-learn
fit/predict conventions; the safety, QP, and simulation modules wire them
into barrier-constrained control loops.
"""

from .ablr import AblrRegressor, load_checkpoint, save_checkpoint
from .gp import MaternGpRegressor, matern52
from .meta import MetaConfig, TaskDataset, generate_meta_tasks, meta_train
from .runner import RunConfig, run_control_loop, warm_start_models
from .safety import ConstraintSpec, Obstacle, SafetyBudget, build_constraint
from .scenarios import SCENARIOS, ScenarioSpec, get_scenario
from .sim import PlantConfig

__all__ = [
    "AblrRegressor", "MaternGpRegressor", "matern52",
    "MetaConfig", "TaskDataset", "generate_meta_tasks", "meta_train",
    "RunConfig", "run_control_loop", "warm_start_models",
    "ConstraintSpec", "Obstacle", "SafetyBudget", "build_constraint",
    "SCENARIOS", "ScenarioSpec", "get_scenario", "PlantConfig",
    "load_checkpoint", "save_checkpoint",
]

__version__ = "0.1.0"
