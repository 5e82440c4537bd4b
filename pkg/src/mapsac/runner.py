"""Closed-loop execution: warm start, per-step constraint assembly, the QP,
plant stepping, trajectory recording, plus the synthetic coverage validator
and the safety-boundary illustration grids."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import qp, sim
from .ablr import AblrRegressor
from .gp import MaternGpRegressor
from .linalg import cholesky, chi2_quantile, solve_chol, spawn_rngs
from .safety import (Obstacle, SafetyBudget, barrier, build_constraint,
                     confidence_radius, lie_terms)


class InfeasibleAbort(RuntimeError):
    """Strict run stopped on an infeasible safety QP."""


@dataclass
class RunConfig:
    method: str = "opt"
    online: bool = False
    n_steps: int = 3000
    settle_dist: float = 0.05
    alpha_gain: float = 1.0
    u_min: float = -5.0
    u_max: float = 5.0
    slack_penalty: float = 1e6
    budget: SafetyBudget = field(default_factory=SafetyBudget)
    finetune_steps: int = 100
    finetune_step_size: float = 1e-2
    omega_max: float = 2.5
    rust_mode: str = "structural"
    residual_mode: str = "oracle"
    strict: bool = False


@dataclass
class TrajectoryRecord:
    """Per-step log: time, state, input, per-constraint diagnostics."""

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    h: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    status: list[str]
    sampled: np.ndarray

    @property
    def n_constraints(self) -> int:
        return self.h.shape[1]

    def min_h(self) -> np.ndarray:
        return self.h.min(axis=0)

    def to_csv(self, path) -> None:
        k = self.n_constraints
        header = ["t", "x1", "x2", "u1", "u2"]
        for i in range(1, k + 1):
            header += [f"h_{i}", f"mu_{i}", f"sigma_{i}"]
        header += ["qp_status", "sampled"]
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for row in range(self.times.size):
                cells = [_fmt(self.times[row]),
                         _fmt(self.states[row, 0]), _fmt(self.states[row, 1]),
                         _fmt(self.inputs[row, 0]), _fmt(self.inputs[row, 1])]
                for i in range(k):
                    cells += [_fmt(self.h[row, i]), _fmt(self.mu[row, i]),
                              _fmt(self.sigma[row, i])]
                cells += [self.status[row], str(int(self.sampled[row]))]
                fh.write(",".join(cells) + "\n")


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


@dataclass
class RunSummary:
    min_h: list[float]
    reached: bool
    steps: int
    relaxed_steps: int
    final_dist: float

    def to_dict(self) -> dict:
        return {"min_h": self.min_h, "reached": self.reached, "steps": self.steps,
                "relaxed_steps": self.relaxed_steps, "final_dist": self.final_dist}


def warm_start_models(models, method: str, obstacles, plant_cfg: sim.PlantConfig,
                      run_cfg: RunConfig, rng: np.random.Generator,
                      n_samples: int = 20):
    """Load the known-safe arc samples into every per-obstacle model.

    The adaptive models additionally fine-tune their prior mean on the loaded
    data; the GP baseline refits its kernel hyperparameters.
    """
    states, targets = sim.warmstart_samples(obstacles, plant_cfg, rng, n=n_samples)
    for j, model in enumerate(models):
        model.fit(states, targets[:, j])
        if method == "mapsac":
            model.finetune_prior_mean(run_cfg.finetune_steps, run_cfg.finetune_step_size)
    return states, targets


def run_control_loop(obstacles, plant_cfg: sim.PlantConfig, run_cfg: RunConfig,
                     rng: np.random.Generator, models=None,
                     start=(0.0, 0.0)) -> tuple[TrajectoryRecord, RunSummary]:
    """Execute one episode and return its record and summary.

    ``models`` carries one learner per obstacle for the gp2/mapsac methods
    (already warm-started); opt/rust run model-free.
    """
    obstacles = list(obstacles)
    k = len(obstacles)
    if run_cfg.method in ("gp2", "mapsac"):
        if models is None or len(models) != k:
            raise ValueError("one warm-started model per obstacle is required")
    dynamics = sim.MovingPointDynamics()
    x = np.asarray(start, dtype=float).copy()

    times, states, inputs = [], [], []
    h_rows, mu_rows, sg_rows = [], [], []
    statuses: list[str] = []
    sampled_flags = []
    relaxed_steps = 0
    reached = False
    steps_taken = run_cfg.n_steps
    prev_state = None
    prev_input = None
    prev_h = None

    for i in range(1, run_cfg.n_steps + 1):
        sampled = bool(run_cfg.online and models is not None
                       and i % plant_cfg.sample_every == 0)
        if sampled:
            _online_update(models, obstacles, x, prev_state, prev_input, prev_h,
                           plant_cfg, run_cfg, dynamics, rng)

        specs = []
        for j, obs in enumerate(obstacles):
            model = models[j] if models is not None else None
            gamma = None
            if run_cfg.budget.mode == "theorem" and isinstance(model, AblrRegressor):
                gamma = confidence_radius(model.prior_cov_, model.posterior_cov_,
                                          run_cfg.budget.resolved_delta_tilde())
            specs.append(build_constraint(
                run_cfg.method, x, obs, dynamics, alpha_gain=run_cfg.alpha_gain,
                budget=run_cfg.budget, model=model, omega_true=plant_cfg.omega,
                omega_max=run_cfg.omega_max, rust_mode=run_cfg.rust_mode,
                gamma=gamma, obstacle_index=j))

        u_ref = sim.nominal_input(x, plant_cfg)
        pairs = [(s.a, s.b) for s in specs]
        sol = qp.solve(u_ref, pairs, run_cfg.u_min, run_cfg.u_max)
        if sol.status == qp.INFEASIBLE:
            if run_cfg.strict:
                raise InfeasibleAbort(f"safety QP infeasible at step {i}")
            sol = qp.solve_relaxed(u_ref, pairs, run_cfg.u_min, run_cfg.u_max,
                                   penalty=run_cfg.slack_penalty)
            relaxed_steps += 1
        u = sol.u

        times.append((i - 1) * plant_cfg.dt)
        states.append(x.copy())
        inputs.append(np.asarray(u, dtype=float).copy())
        h_rows.append([s.h for s in specs])
        mu_rows.append([s.mu for s in specs])
        sg_rows.append([s.sigma for s in specs])
        statuses.append(sol.status)
        sampled_flags.append(sampled)

        prev_state = x
        prev_input = np.asarray(u, dtype=float)
        prev_h = np.array([s.h for s in specs])
        x = sim.step(x, u, plant_cfg, rng)
        if float(np.linalg.norm(x - plant_cfg.target)) < run_cfg.settle_dist:
            reached = True
            steps_taken = i
            break

    record = TrajectoryRecord(
        times=np.array(times), states=np.array(states), inputs=np.array(inputs),
        h=np.array(h_rows), mu=np.array(mu_rows), sigma=np.array(sg_rows),
        status=statuses, sampled=np.array(sampled_flags, dtype=bool))
    summary = RunSummary(
        min_h=[float(v) for v in record.min_h()],
        reached=reached, steps=steps_taken, relaxed_steps=relaxed_steps,
        final_dist=float(np.linalg.norm(x - plant_cfg.target)))
    return record, summary


def _online_update(models, obstacles, x, prev_state, prev_input, prev_h,
                   plant_cfg, run_cfg, dynamics, rng) -> None:
    for j, (model, obs) in enumerate(zip(models, obstacles)):
        if run_cfg.residual_mode == "oracle":
            sample_x = x
            value = sim.observe_residual(x, obs, plant_cfg, rng)
        else:
            if prev_state is None:
                continue  # no completed step to difference yet
            h_now, _ = barrier(x, obs)
            lfh, lgh = lie_terms(prev_state, obs, dynamics)
            value = sim.finite_difference_residual(
                h_now, float(prev_h[j]), lfh, lgh, prev_input, plant_cfg.dt)
            sample_x = prev_state
        model.partial_fit(np.asarray(sample_x)[None, :], [value])
        if run_cfg.method == "mapsac":
            model.finetune_prior_mean(run_cfg.finetune_steps,
                                      run_cfg.finetune_step_size)


# ---------------------------------------------------------------------------
# Synthetic coverage check of the weight confidence sets.

@dataclass
class CoverageReport:
    d: int
    delta_tilde: float
    n_trials: int
    horizon: int
    step_violation_rate: float
    ever_violated_rate: float

    def to_dict(self) -> dict:
        return {"d": self.d, "delta_tilde": self.delta_tilde,
                "n_trials": self.n_trials, "horizon": self.horizon,
                "step_violation_rate": self.step_violation_rate,
                "ever_violated_rate": self.ever_violated_rate}


def validate_confidence_coverage(d: int, delta_tilde: float, n_trials: int,
                                 horizon: int, seed: int,
                                 noise_variance: float = 0.1,
                                 k0_scale: float = 1.0,
                                 noise_scale: float = 1.0) -> CoverageReport:
    """Monte-Carlo check that the true weights stay inside the confidence set.

    Each trial draws true weights from the prior (so the calibration premise
    holds by construction), streams random feature/observation pairs through
    the online posterior update, and tests the weighted error at every step
    against the confidence radius. Reported are the per-step violation
    frequency and the per-trial ever-violated rate.
    """
    if n_trials < 1:
        raise ValueError("need at least one trial")
    sigma0 = float(np.sqrt(noise_variance))
    k0 = k0_scale * np.eye(d)
    k0_inv = np.eye(d) / k0_scale
    chi2_value = chi2_quantile(d, 1.0 - delta_tilde)
    mu0 = np.zeros(d)

    step_viols = 0
    step_total = 0
    ever_count = 0
    for rng in spawn_rngs(seed, n_trials):
        w_star = mu0 + sigma0 * np.sqrt(k0_scale) * rng.standard_normal(d)
        sxx = np.zeros((d, d))
        sxy = np.zeros(d)
        ever = False
        for t in range(horizon + 1):
            precision = k0_inv + sxx
            chol = cholesky(precision)
            k_t = solve_chol(chol, np.eye(d))
            mu_t = solve_chol(chol, sxy + k0_inv @ mu0)
            gamma = confidence_radius(k0, k_t, delta_tilde, chi2_value=chi2_value)
            dev = w_star - mu_t
            if float(dev @ precision @ dev) > (sigma0 * gamma) ** 2:
                step_viols += 1
                ever = True
            step_total += 1
            if t == horizon:
                break
            phi = rng.uniform(0.0, 1.0, size=d)
            y = float(phi @ w_star) + noise_scale * rng.normal(0.0, sigma0)
            sxx += np.outer(phi, phi)
            sxy += phi * y
        ever_count += int(ever)
    return CoverageReport(d=d, delta_tilde=delta_tilde, n_trials=n_trials,
                          horizon=horizon,
                          step_violation_rate=step_viols / step_total,
                          ever_violated_rate=ever_count / n_trials)


# ---------------------------------------------------------------------------
# Safety-boundary illustration grids.

@dataclass
class IllustrationResult:
    xs: np.ndarray
    ys: np.ndarray
    fields: dict[str, np.ndarray]
    areas: dict[str, float]
    sample_states: np.ndarray


def _barrier_grid(points: np.ndarray, obstacle: Obstacle) -> np.ndarray:
    diff = points - obstacle.center
    return np.sum(diff * diff, axis=1) - obstacle.radius ** 2


def _residual_grid(points: np.ndarray, omega: float, obstacle: Obstacle) -> np.ndarray:
    grad = 2.0 * (points - obstacle.center)
    drift = -omega * (np.cos(points[:, 0]) + np.sin(points[:, 1]))
    return (grad[:, 0] + grad[:, 1]) * drift


def illustration_fields(ablr_template: AblrRegressor, obstacle: Obstacle,
                        plant_cfg: sim.PlantConfig, rng: np.random.Generator,
                        beta: float = 1.96, counts=(10, 20), grid_n: int = 201,
                        lo: float = -0.5, hi: float = 3.5,
                        finetune_steps: int = 100,
                        finetune_step_size: float = 1e-2,
                        gp_kwargs: dict | None = None) -> IllustrationResult:
    """Pessimistic safety-boundary fields on a square grid.

    Emits ``h - estimate`` where the estimate is the true residual or a
    model's upper confidence value. Negative cells are unreachable under the
    corresponding worst-case constraint; their total area measures how
    conservative each model is. Sample counts are nested subsets of one
    arc dataset so the comparison isolates the number of samples.
    """
    states, targets = sim.warmstart_samples([obstacle], plant_cfg, rng,
                                            n=max(counts))
    xs = np.linspace(lo, hi, grid_n)
    ys = np.linspace(lo, hi, grid_n)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    points = np.column_stack([gx.ravel(), gy.ravel()])
    h_grid = _barrier_grid(points, obstacle)
    cell_area = (xs[1] - xs[0]) * (ys[1] - ys[0])

    fields = {"true": (h_grid - _residual_grid(points, plant_cfg.omega, obstacle))
              .reshape(grid_n, grid_n)}
    for n in counts:
        gp_model = MaternGpRegressor(**(gp_kwargs or {}))
        gp_model.fit(states[:n], targets[:n, 0])
        mu, sd = gp_model.predict(points, return_std=True, include_noise=True)
        fields[f"gp_{n}"] = (h_grid - (mu + beta * sd)).reshape(grid_n, grid_n)

        ablr = ablr_template.clone_prior()
        ablr.fit(states[:n], targets[:n, 0])
        ablr.finetune_prior_mean(finetune_steps, finetune_step_size)
        mu, sd = ablr.predict(points, return_std=True)
        fields[f"ablr_{n}"] = (h_grid - (mu + beta * sd)).reshape(grid_n, grid_n)

    areas = {name: float(np.sum(grid < 0.0) * cell_area)
             for name, grid in fields.items()}
    return IllustrationResult(xs=xs, ys=ys, fields=fields, areas=areas,
                              sample_states=states)
