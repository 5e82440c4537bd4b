"""Session fixtures: meta-trained checkpoints for the acceptance suite.

Training the two models takes minutes, so results are cached under the
pytest cache directory keyed by a hash of the package sources and the
training configuration; any code or config change retrains.
"""

import hashlib
import pathlib

import pytest

import mapsac
from mapsac.ablr import AblrRegressor, save_checkpoint
from mapsac.linalg import spawn_rngs
from mapsac.meta import MetaConfig, generate_meta_tasks, meta_train
from mapsac.scenarios import get_scenario

SCENARIO1_TRAIN = dict(epochs=5000, step_decay=0.9997, k0_scale=30.0, seed=0)
SCENARIO2_TRAIN = dict(epochs=6000, step_decay=0.9997, k0_scale=30.0, seed=0)


def _source_hash(extra: str) -> str:
    digest = hashlib.sha256()
    src = pathlib.Path(mapsac.__file__).parent
    for path in sorted(src.glob("*.py")):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    digest.update(extra.encode())
    return digest.hexdigest()[:16]


def _train_checkpoint(scenario_name: str, train_kw: dict, cache_dir) -> str:
    scenario = get_scenario(scenario_name)
    tag = _source_hash(f"{scenario_name}:{sorted(train_kw.items())}")
    path = cache_dir / f"{scenario_name}-{tag}.ckpt"
    if not path.exists():
        cfg = MetaConfig(n_tasks=scenario.n_meta_tasks,
                         samples_per_task=scenario.samples_per_task,
                         n_features=scenario.n_features, **train_kw)
        rng = spawn_rngs(cfg.seed, 1)[0]
        tasks = generate_meta_tasks(scenario, cfg.n_tasks, cfg.samples_per_task, rng)
        result = meta_train(cfg, tasks, scenario.bounds_lo, scenario.bounds_hi)
        model = AblrRegressor(result.feature_map, result.prior_mean,
                              result.prior_cov, cfg.noise_variance)
        save_checkpoint(path, model)
    return str(path)


@pytest.fixture(scope="session")
def checkpoint_cache_dir(tmp_path_factory):
    # a fixed location survives across sessions; fall back to tmp when the
    # repo directory is read-only
    here = pathlib.Path(__file__).parent / "_checkpoint_cache"
    try:
        here.mkdir(exist_ok=True)
        return here
    except OSError:
        return tmp_path_factory.mktemp("checkpoints")


@pytest.fixture(scope="session")
def scenario1_checkpoint(checkpoint_cache_dir):
    return _train_checkpoint("fixed-obstacle", SCENARIO1_TRAIN, checkpoint_cache_dir)


@pytest.fixture(scope="session")
def scenario2_checkpoint(checkpoint_cache_dir):
    return _train_checkpoint("uncertain-obstacle", SCENARIO2_TRAIN, checkpoint_cache_dir)
