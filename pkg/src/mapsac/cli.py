"""Command-line entry points.

Subcommands: ``meta-train`` (build a checkpoint from sampled historical
tasks), ``run`` (one closed-loop episode under a chosen method), ``illustrate``
(safety-boundary grids), and ``validate-prop1`` (Monte-Carlo coverage check of
the weight confidence sets). Exit codes: 0 success, 2 when a strict run aborts
on an infeasible safety QP, 1 for any other error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .ablr import AblrRegressor, CheckpointError, load_checkpoint, save_checkpoint
from .gp import MaternGpRegressor
from .linalg import DomainError, make_rng, spawn_rngs
from .meta import (DivergenceError, MetaConfig, RolloutUnsafe, generate_meta_tasks,
                   meta_train)
from .runner import (InfeasibleAbort, RunConfig, illustration_fields,
                     run_control_loop, validate_confidence_coverage,
                     warm_start_models)
from .safety import SafetyBudget
from .scenarios import ConfigError, get_scenario, load_config
from .sim import PlantConfig


class CheckpointMissing(FileNotFoundError):
    """A command that needs a checkpoint was not given one."""


class _UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # raise instead of exiting so the documented exit codes hold
    def error(self, message):
        raise _UsageError(message)


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2))
        fh.write("\n")


def _plant_config(scenario, cfg: dict) -> PlantConfig:
    plant = PlantConfig(omega=scenario.omega_true,
                        target=np.asarray(scenario.target, dtype=float))
    plant.dt = cfg.get("sim.dt", plant.dt)
    plant.process_noise_std = cfg.get("sim.process_noise_std", plant.process_noise_std)
    plant.obs_noise_variance = cfg.get("sim.obs_noise_variance", plant.obs_noise_variance)
    plant.sample_every = cfg.get("sim.sample_every", plant.sample_every)
    plant.nominal_gain = cfg.get("sim.nominal_gain", plant.nominal_gain)
    return plant


def _run_config(args, cfg: dict) -> RunConfig:
    budget = SafetyBudget(
        beta=args.beta if args.beta is not None else cfg.get("safety.beta", 1.96),
        mode=cfg.get("safety.beta_mode", "fixed_beta"),
        delta_tilde=(args.delta_tilde if args.delta_tilde is not None
                     else cfg.get("safety.delta_tilde")))
    return RunConfig(
        method=args.method,
        online=args.online,
        n_steps=cfg.get("run.n_steps", 3000),
        settle_dist=cfg.get("run.settle_dist", 0.05),
        alpha_gain=cfg.get("safety.alpha_gain", 1.0),
        u_min=cfg.get("run.u_min", -5.0),
        u_max=cfg.get("run.u_max", 5.0),
        slack_penalty=cfg.get("qp.slack_penalty", 1e6),
        budget=budget,
        finetune_steps=cfg.get("ablr.finetune_steps", 100),
        finetune_step_size=cfg.get("ablr.finetune_step_size", 1e-2),
        omega_max=cfg.get("safety.omega_max", 2.5),
        rust_mode=cfg.get("safety.rust_bound", "structural"),
        residual_mode=cfg.get("sim.residual_mode", "oracle"),
        strict=args.strict)


def _gp_kwargs(cfg: dict, seed: int) -> dict:
    return {"noise_variance": cfg.get("ablr.noise_variance", 0.1),
            "n_starts": cfg.get("gp.n_starts", 8),
            "n_steps": cfg.get("gp.n_steps", 200),
            "refit_steps": cfg.get("gp.refit_steps", 25),
            "seed": seed}


def cmd_meta_train(args) -> int:
    scenario = get_scenario(args.scenario)
    cfg = load_config(args.config) if args.config else {}
    meta_cfg = MetaConfig(
        n_tasks=cfg.get("meta.n_tasks", scenario.n_meta_tasks),
        samples_per_task=cfg.get("meta.samples_per_task", scenario.samples_per_task),
        n_features=scenario.n_features,
        epochs=cfg.get("meta.epochs", 2000),
        step_size=cfg.get("meta.step_size", 1e-3),
        step_size_prior=cfg.get("meta.step_size_prior", 5e-2),
        step_decay=cfg.get("meta.step_decay", 1.0),
        context_fraction=cfg.get("meta.context_fraction", 0.5),
        conditioning=cfg.get("meta.conditioning", "split"),
        seed=args.seed,
        hidden=cfg.get("meta.hidden", 256),
        k0_scale=cfg.get("ablr.k0_scale", 1.0),
        noise_variance=cfg.get("ablr.noise_variance", 0.1))
    task_rng = spawn_rngs(args.seed, 1)[0]
    tasks = generate_meta_tasks(scenario, meta_cfg.n_tasks,
                                meta_cfg.samples_per_task, task_rng,
                                dt=cfg.get("sim.dt", 0.01),
                                obs_noise_variance=meta_cfg.noise_variance)
    result = meta_train(meta_cfg, tasks, scenario.bounds_lo, scenario.bounds_hi)
    model = AblrRegressor(result.feature_map, result.prior_mean,
                          result.prior_cov, meta_cfg.noise_variance)
    save_checkpoint(args.out, model)
    trace_path = args.out + ".trace.csv"
    with open(trace_path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in enumerate(result.trace):
            fh.write(f"{epoch},{_fmt(loss)}\n")
    if result.trace:
        print(f"meta-train {scenario.name}: {len(tasks)} tasks, "
              f"loss {result.trace[0]:.4f} -> {result.trace[-1]:.4f}, "
              f"checkpoint {args.out}")
    else:
        print(f"meta-train {scenario.name}: 0 epochs, checkpoint {args.out}")
    return 0


def _build_models(args, scenario, cfg, plant, run_cfg, rng):
    if args.method not in ("gp2", "mapsac"):
        return None
    if args.method == "mapsac":
        if not args.checkpoint:
            raise CheckpointMissing("method mapsac requires --checkpoint")
        template = load_checkpoint(args.checkpoint)
        models = [template.clone_prior() for _ in scenario.obstacles]
    else:
        models = [MaternGpRegressor(**_gp_kwargs(cfg, seed=1000 * args.seed + j))
                  for j in range(len(scenario.obstacles))]
    warm_start_models(models, args.method, scenario.obstacles, plant, run_cfg, rng)
    return models


def cmd_run(args) -> int:
    scenario = get_scenario(args.scenario)
    cfg = load_config(args.config) if args.config else {}
    plant = _plant_config(scenario, cfg)
    run_cfg = _run_config(args, cfg)
    rng = make_rng(args.seed)
    models = _build_models(args, scenario, cfg, plant, run_cfg, rng)
    record, summary = run_control_loop(scenario.obstacles, plant, run_cfg, rng,
                                       models=models, start=scenario.start)
    os.makedirs(args.out, exist_ok=True)
    record.to_csv(os.path.join(args.out, "trajectory.csv"))
    _write_json(os.path.join(args.out, "summary.json"), summary.to_dict())
    print(f"run {scenario.name} method={args.method} online={args.online} "
          f"seed={args.seed}: reached={summary.reached} steps={summary.steps} "
          f"min_h={[round(v, 4) for v in summary.min_h]} "
          f"relaxed={summary.relaxed_steps}")
    return 0


def cmd_validate_prop1(args) -> int:
    if args.trials < 100:
        raise _UsageError("--trials must be at least 100")
    report = validate_confidence_coverage(
        d=args.d, delta_tilde=args.delta_tilde, n_trials=args.trials,
        horizon=args.horizon, seed=args.seed, noise_scale=args.noise_scale)
    payload = report.to_dict()
    if args.out:
        _write_json(args.out, payload)
    print(f"coverage d={report.d} delta_tilde={report.delta_tilde}: "
          f"ever-violated {report.ever_violated_rate:.4f}, "
          f"per-step {report.step_violation_rate:.5f} "
          f"({report.n_trials} trials, horizon {report.horizon})")
    return 0


def cmd_illustrate(args) -> int:
    if not args.checkpoint:
        raise CheckpointMissing("illustrate requires --checkpoint")
    cfg = load_config(args.config) if args.config else {}
    scenario = get_scenario("illustrate")
    template = load_checkpoint(args.checkpoint)
    plant = _plant_config(scenario, cfg)
    rng = make_rng(args.seed)
    beta = args.beta if args.beta is not None else cfg.get("safety.beta", 1.96)
    result = illustration_fields(
        template, scenario.obstacles[0], plant, rng, beta=beta,
        finetune_steps=cfg.get("ablr.finetune_steps", 100),
        finetune_step_size=cfg.get("ablr.finetune_step_size", 1e-2),
        gp_kwargs=_gp_kwargs(cfg, seed=1000 * args.seed))
    os.makedirs(args.out, exist_ok=True)
    names = ["true", "gp_10", "gp_20", "ablr_10", "ablr_20"]
    with open(os.path.join(args.out, "fields.csv"), "w", encoding="ascii",
              newline="\n") as fh:
        fh.write("x1,x2," + ",".join(names) + "\n")
        for i, x1 in enumerate(result.xs):
            for j, x2 in enumerate(result.ys):
                cells = [_fmt(x1), _fmt(x2)]
                cells += [_fmt(result.fields[name][i, j]) for name in names]
                fh.write(",".join(cells) + "\n")
    _write_json(os.path.join(args.out, "areas.json"), result.areas)
    print("unreachable areas: " +
          ", ".join(f"{k}={v:.4f}" for k, v in sorted(result.areas.items())))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mapsac",
                     description="probabilistically safe adaptive control benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("meta-train", help="train a model on sampled historical tasks")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.set_defaults(func=cmd_meta_train)

    p = sub.add_parser("run", help="run one closed-loop episode")
    p.add_argument("--scenario", required=True)
    p.add_argument("--method", required=True, choices=["opt", "rust", "gp2", "mapsac"])
    p.add_argument("--online", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--beta", type=float)
    p.add_argument("--delta-tilde", type=float, dest="delta_tilde")
    p.add_argument("--config")
    p.add_argument("--strict", action="store_true",
                   help="abort (exit 2) instead of relaxing an infeasible QP")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate-prop1",
                       help="Monte-Carlo coverage of the weight confidence sets")
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--delta-tilde", type=float, default=0.05, dest="delta_tilde")
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--horizon", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-scale", type=float, default=1.0, dest="noise_scale")
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate_prop1)

    p = sub.add_parser("illustrate", help="safety-boundary comparison grids")
    p.add_argument("--checkpoint")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta", type=float)
    p.add_argument("--config")
    p.set_defaults(func=cmd_illustrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except InfeasibleAbort as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 2
    except (_UsageError, ConfigError, CheckpointError, CheckpointMissing,
            DivergenceError, RolloutUnsafe, DomainError, OSError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
