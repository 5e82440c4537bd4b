"""Meta-training of the adaptive model on historical tasks.

The loss is the (twice, plus-constant) Gaussian negative log likelihood of
held-out points under the posterior conditioned on a context subset of each
task: per target, log-variance plus the squared standardized residual. Its
gradient with respect to the network weights and the prior mean is computed
in closed form, chaining through the posterior solve (matrix-inverse and
quadratic-form differentials), so training needs no autodiff.

Task data comes from rollouts of the perfect-knowledge controller on sampled
environments, mirroring pre-planned safe trajectories: uncertainty parameters
and obstacle layouts are drawn per task, the rollout is kept only if it never
leaves the safe set, and sparse noisy residual observations are recorded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import sim
from .linalg import cholesky, make_rng, solve_chol
from .nets import FeatureMap, InputScaler, MlpParams, init_mlp, mlp_backward, \
    mlp_forward_cached
from .optim import Adam
from .runner import RunConfig, run_control_loop
from .safety import barrier, residual_true
from .scenarios import ScenarioSpec


class EmptyTask(ValueError):
    """A task with no usable samples was passed to the meta loss."""


class DivergenceError(RuntimeError):
    """Meta-training loss became non-finite."""


class RolloutUnsafe(RuntimeError):
    """Task generation could not find a safe source trajectory."""


@dataclass
class TaskDataset:
    """Samples of one historical task: one (states, residuals) piece per constraint."""

    omega: float
    obstacles: list
    pieces: list[tuple[np.ndarray, np.ndarray]]

    def n_samples(self) -> int:
        return sum(states.shape[0] for states, _ in self.pieces)


@dataclass
class MetaConfig:
    n_tasks: int = 20
    samples_per_task: int = 30
    n_features: int = 10
    epochs: int = 2000
    step_size: float = 1e-3
    # the prior mean must travel to the scale of the residuals (tens), far
    # beyond what the network step size can cover in the epoch budget
    step_size_prior: float = 5e-2
    step_decay: float = 1.0
    context_fraction: float = 0.5
    conditioning: str = "split"   # "split" holds out targets; "full" predicts in-sample
    seed: int = 0
    hidden: int = 256
    k0_scale: float = 1.0
    noise_variance: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.context_fraction < 1.0:
            raise ValueError("context_fraction must lie in (0, 1)")
        for name in ("n_tasks", "samples_per_task", "n_features", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


def meta_nll(net: MlpParams, scaler: InputScaler, mu0: np.ndarray,
             k0: np.ndarray, noise_variance: float, tasks: list[TaskDataset],
             context_fraction: float = 0.5, split_seed: int = 0,
             conditioning: str = "split", want_grad: bool = True):
    """Meta loss and its exact gradient over (network weights, prior mean).

    Context/target splits are reshuffled deterministically from
    ``split_seed``; pass a fresh seed per epoch. Returns
    ``(loss, net_grad, mu0_grad)`` with ``net_grad=None`` when ``want_grad``
    is false.
    """
    if not tasks:
        raise EmptyTask("meta loss needs at least one task")
    d = mu0.size
    k0_chol = cholesky(k0)
    k0_inv = solve_chol(k0_chol, np.eye(d))
    split_rng = make_rng(split_seed)
    log2pi = np.log(2.0 * np.pi)

    loss = 0.0
    grad_net = None
    grad_mu0 = np.zeros(d)
    if want_grad:
        grad_net = MlpParams([np.zeros_like(w) for w in net.weights],
                             [np.zeros_like(b) for b in net.biases])

    for task in tasks:
        for states, ys in task.pieces:
            n = states.shape[0]
            if n == 0:
                raise EmptyTask("task piece without samples")
            perm = split_rng.permutation(n)
            if conditioning == "full" or n == 1:
                ctx = tgt = np.arange(n)
            else:
                n_ctx = min(int(np.ceil(context_fraction * n)), n - 1)
                ctx = perm[:n_ctx]
                tgt = perm[n_ctx:]

            scaled = scaler.transform(states)
            phi, cache = mlp_forward_cached(net, scaled)
            phi_c = phi[ctx]
            phi_t = phi[tgt]
            y_c = ys[ctx]
            y_t = ys[tgt]

            precision = k0_inv + phi_c.T @ phi_c
            chol = cholesky(precision)
            k_post = solve_chol(chol, np.eye(d))
            v = phi_c.T @ y_c + k0_inv @ mu0
            mu_post = k_post @ v

            q = phi_t @ k_post                       # rows: K phi_j
            quad = np.einsum("ij,ij->i", q, phi_t)
            var = noise_variance * (1.0 + quad)
            resid = y_t - phi_t @ mu_post
            loss += float(np.sum(np.log(var) + resid * resid / var)
                          + tgt.size * log2pi)

            if not want_grad:
                continue

            d_var = 1.0 / var - (resid * resid) / (var * var)
            d_resid = 2.0 * resid / var

            upstream = np.zeros((n, d))
            # direct dependence of the target terms on their own features
            upstream[tgt] += (2.0 * noise_variance) * d_var[:, None] * q
            upstream[tgt] += d_resid[:, None] * (-mu_post)[None, :]

            g_mu = -(phi_t.T @ d_resid)              # dL/d mu_post
            g_k = noise_variance * (phi_t.T @ (d_var[:, None] * phi_t))
            g_k += np.outer(g_mu, v)                 # mu_post = K v
            g_v = k_post @ g_mu
            g_prec = -k_post @ g_k @ k_post          # K = precision^-1
            sym = g_prec + g_prec.T
            upstream[ctx] += phi_c @ sym + y_c[:, None] * g_v[None, :]
            grad_mu0 += k0_inv @ g_v

            piece_grads = mlp_backward(net, scaled, upstream, cache=cache)
            for acc, g in zip(grad_net.weights, piece_grads.weights):
                acc += g
            for acc, g in zip(grad_net.biases, piece_grads.biases):
                acc += g

    return loss, grad_net, grad_mu0


@dataclass
class MetaResult:
    feature_map: FeatureMap
    prior_mean: np.ndarray
    prior_cov: np.ndarray
    trace: list[float] = field(default_factory=list)


def meta_train(cfg: MetaConfig, tasks: list[TaskDataset],
               bounds_lo, bounds_hi) -> MetaResult:
    """Train network weights and prior mean on the historical tasks.

    The prior covariance stays frozen at ``k0_scale`` times identity; only
    the network and the prior mean receive gradients. The per-epoch loss
    trace is returned for logging.
    """
    if not tasks:
        raise EmptyTask("meta training needs at least one task")
    rng = make_rng(cfg.seed)
    scaler = InputScaler(np.asarray(bounds_lo, dtype=float),
                         np.asarray(bounds_hi, dtype=float))
    net = init_mlp(2, cfg.n_features, rng, hidden=(cfg.hidden, cfg.hidden))
    sizes = net.layer_sizes
    n_net = net.n_params()
    mu0 = np.zeros(cfg.n_features)
    k0 = cfg.k0_scale * np.eye(cfg.n_features)

    flat = np.concatenate([net.flatten(), mu0])
    adam = Adam(flat.size, step_size=cfg.step_size)
    lr = np.concatenate([np.full(n_net, cfg.step_size),
                         np.full(mu0.size, cfg.step_size_prior)])
    trace: list[float] = []
    for epoch in range(cfg.epochs):
        net = MlpParams.from_flat(flat[:n_net], sizes)
        mu0 = flat[n_net:]
        loss, g_net, g_mu0 = meta_nll(
            net, scaler, mu0, k0, cfg.noise_variance, tasks,
            context_fraction=cfg.context_fraction,
            split_seed=cfg.seed * 1000003 + epoch,
            conditioning=cfg.conditioning)
        if not np.isfinite(loss):
            raise DivergenceError(f"meta loss non-finite at epoch {epoch}")
        trace.append(loss)
        grad = np.concatenate([g_net.flatten(), g_mu0])
        flat = adam.step(flat, grad, step_size=lr)
        lr = lr * cfg.step_decay

    net = MlpParams.from_flat(flat[:n_net], sizes)
    mu0 = flat[n_net:].copy()
    return MetaResult(feature_map=FeatureMap(net, scaler), prior_mean=mu0,
                      prior_cov=k0, trace=trace)


def _safe_rollout(obstacles, omega, scenario, rng, dt, rollout_steps,
                  lo, hi, max_retries):
    """One perfect-knowledge rollout toward the target that stays safe and
    inside the scenario bounds; starts are spread over the workspace."""
    plant = sim.PlantConfig(omega=omega, dt=dt, process_noise_std=0.0,
                            target=np.asarray(scenario.target, dtype=float))
    run_cfg = RunConfig(method="opt", n_steps=rollout_steps)
    for _ in range(max_retries):
        start = rng.uniform(-0.5, 3.5, size=2)
        if min(barrier(start, obs)[0] for obs in obstacles) <= 0.05:
            continue
        record, summary = run_control_loop(obstacles, plant, run_cfg, rng,
                                           start=start)
        if min(summary.min_h) < 0.0:
            continue
        states = record.states
        if np.any(states < lo) or np.any(states > hi):
            continue
        return states
    return None


def generate_meta_tasks(scenario: ScenarioSpec, n_tasks: int,
                        samples_per_task: int, rng: np.random.Generator,
                        dt: float = 0.01, rollout_steps: int = 400,
                        rollouts_per_task: int = 3,
                        obs_noise_variance: float = 0.1,
                        max_retries: int = 25) -> list[TaskDataset]:
    """Sample historical tasks from rollouts of the perfect-knowledge controller.

    Several pre-planned safe trajectories per environment are pooled before
    subsampling (a single trajectory cannot teach the model how observations
    in one region constrain predictions in another). Every source rollout
    stays in the safe set; the recorded residual observations are noisy, one
    stream per obstacle.
    """
    tasks: list[TaskDataset] = []
    lo = np.asarray(scenario.bounds_lo, dtype=float)
    hi = np.asarray(scenario.bounds_hi, dtype=float)
    for task_idx in range(n_tasks):
        accepted = None
        for _ in range(max_retries):
            omega = float(rng.uniform(0.5, 2.5))
            obstacles = scenario.sample_meta_obstacles(rng)
            pools = []
            for _ in range(rollouts_per_task):
                states = _safe_rollout(obstacles, omega, scenario, rng, dt,
                                       rollout_steps, lo, hi, max_retries)
                if states is not None:
                    pools.append(states)
            if not pools:
                continue
            pooled = np.vstack(pools)
            if pooled.shape[0] < samples_per_task:
                continue
            idx = np.sort(rng.choice(pooled.shape[0], size=samples_per_task,
                                     replace=False))
            picked = pooled[idx]
            pieces = []
            for obs in obstacles:
                noise = rng.normal(0.0, np.sqrt(obs_noise_variance),
                                   size=samples_per_task)
                values = np.array([residual_true(s, omega, obs) for s in picked])
                pieces.append((picked.copy(), values + noise))
            accepted = TaskDataset(omega=omega, obstacles=obstacles, pieces=pieces)
            break
        if accepted is None:
            raise RolloutUnsafe(
                f"no safe source trajectory found for task {task_idx}")
        tasks.append(accepted)
    return tasks
