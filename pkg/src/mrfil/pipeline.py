"""Pipeline stages on a run directory: demos, dynamics, pre-training, training.

Layout of a run directory::

    config.ini  seeds.json
    demos/train.csv  demos/eval.csv
    dynamics/manifest.json  dynamics/member_*.bin  dynamics/m0.bin
    pretrain/bc.*  pretrain/actor.*  pretrain/critic.bin  pretrain/pretrain.csv
    runs/<label>/metrics.csv  runs/<label>/eval.csv  runs/<label>/policy.*
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .agent import GaussianPolicy, MetricsLog, QFunction, bc_train, mbsr_pretrain, mrfil_train
from .config import ExperimentConfig
from .demos import ReplayPool, generate_demos, load_demos, save_demos, split_train_eval
from .dynmodel import (EnsembleDynamics, SingleDynamics, calibrate_threshold, load_dynamics, save_dynamics,
                       train_dynamics)
from .envs import ContinuousEnv, evaluate, expert_policy, make_env
from .errors import ConfigError, MissingArtifactError
from .nn import AdamState, load_params, save_params


def derive_seeds(seed: int) -> dict[str, int]:
    """Every random stream of a run, derived from the single run seed."""
    return {"run": seed, "demos": seed, "split": seed + 1, "dynamics": seed + 2, "m0": seed + 3,
            "bc": seed + 4, "actor": seed + 5, "critic": seed + 6, "mbsr": seed + 7,
            "train": seed + 8, "eval": 10_000 + seed}


def build_env(cfg: ExperimentConfig) -> ContinuousEnv:
    e = cfg.env
    return make_env(e.kind, horizon=e.horizon, dt=e.dt, obs_noise_std=e.obs_noise_std,
                    goal_distance=e.goal_distance, goal_radius=e.goal_radius,
                    goal_terminates=e.goal_terminates)


def write_run_header(cfg: ExperimentConfig, out) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    (out / "seeds.json").write_text(json.dumps(derive_seeds(cfg.seed), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- stages

def stage_gen_demos(cfg: ExperimentConfig, out):
    seeds = derive_seeds(cfg.seed)
    env = build_env(cfg)
    demos = generate_demos(env, cfg.demos.episodes, seeds["demos"])
    train, held = split_train_eval(demos, cfg.demos.train_fraction, seeds["split"])
    d = Path(out) / "demos"
    d.mkdir(parents=True, exist_ok=True)
    save_demos(train, d / "train.csv")
    save_demos(held, d / "eval.csv")
    return train, held


def load_demo_split(out):
    d = Path(out) / "demos"
    for name in ("train.csv", "eval.csv"):
        if not (d / name).exists():
            raise MissingArtifactError("gen-demos", d / name)
    return load_demos(d / "train.csv"), load_demos(d / "eval.csv")


def stage_train_dynamics(cfg: ExperimentConfig, out):
    train, held = load_demo_split(out)
    seeds = derive_seeds(cfg.seed)
    dc = cfg.dynamics
    ens = EnsembleDynamics.create(train.state_dim, train.action_dim, dc.ensemble_size, seeds["dynamics"],
                                  dc.hidden, dc.depth)
    _, ens_log = train_dynamics(ens, train, held, dc.epochs, seeds["dynamics"], dc.batch_size, dc.lr)
    m0 = SingleDynamics.create(train.state_dim, train.action_dim, seeds["m0"], dc.hidden, dc.depth)
    _, m0_log = train_dynamics(m0, train, held, dc.epochs, seeds["m0"], dc.batch_size, dc.lr)
    reward = calibrate_threshold(ens, held, cfg.reward.quantile, cfg.reward.literal_eq2)
    d = Path(out) / "dynamics"
    save_dynamics(d, m0, ens, reward)
    lines = ["model,epoch,train_mse,eval_mse"]
    for i, log in enumerate(ens_log):
        lines += [f"member_{i},{e},{tr:.17g},{ev:.17g}" for e, tr, ev in log]
    lines += [f"m0,{e},{tr:.17g},{ev:.17g}" for e, tr, ev in m0_log]
    (d / "training.csv").write_text("\n".join(lines) + "\n")
    return m0, ens, reward


# ---------------------------------------------------------------- policy persistence

def save_policy(policy: GaussianPolicy, directory, name: str) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_params(policy.mean_net, d / f"{name}.bin")
    meta = {"log_std": policy.log_std.tolist(), "action_low": policy.action_low,
            "action_high": policy.action_high}
    (d / f"{name}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_policy(directory, name: str, stage: str, lr: float = 3e-4) -> GaussianPolicy:
    d = Path(directory)
    if not (d / f"{name}.bin").exists():
        raise MissingArtifactError(stage, d / f"{name}.bin")
    net = load_params(d / f"{name}.bin")
    meta = json.loads((d / f"{name}.json").read_text())
    log_std = np.array(meta["log_std"], dtype=float)
    return GaussianPolicy(net, log_std, meta["action_low"], meta["action_high"],
                          AdamState.for_params(net, lr=lr), AdamState.for_arrays([log_std], lr=lr))


def load_critic(directory, stage: str, lr: float = 3e-4) -> QFunction:
    p = Path(directory) / "critic.bin"
    if not p.exists():
        raise MissingArtifactError(stage, p)
    net = load_params(p)
    return QFunction(net, AdamState.for_params(net, lr=lr))


def stage_pretrain(cfg: ExperimentConfig, out):
    """Behaviour cloning of the expert surrogate, then MBSR pre-training of a fresh actor-critic."""
    m0, ens, reward = load_dynamics(Path(out) / "dynamics")
    train, _ = load_demo_split(out)
    seeds = derive_seeds(cfg.seed)
    env = build_env(cfg)
    tc = cfg.train
    bc = bc_train(train, cfg.bc.epochs, seeds["bc"], tc.hidden, cfg.bc.lr, cfg.bc.batch_size,
                  tc.init_log_std, env.action_low, env.action_high)
    actor = GaussianPolicy.create(env.state_dim, env.action_dim, seeds["actor"], tc.hidden, 2,
                                  tc.init_log_std, env.action_low, env.action_high, tc.alpha)
    critic = QFunction.create(env.state_dim, env.action_dim, seeds["critic"], tc.hidden, 2, tc.critic_lr)
    log = mbsr_pretrain(actor, critic, m0, ens, reward, train, tc, seeds["mbsr"], bc=bc, env=env)
    d = Path(out) / "pretrain"
    save_policy(bc, d, "bc")
    save_policy(actor, d, "actor")
    save_params(critic.net, d / "critic.bin")
    lines = ["step,reward,actor_loss,critic_loss"]
    lines += [f"{i},{r:.17g},{a:.17g},{c:.17g}" for i, (r, a, c) in
              enumerate(zip(log.rewards, log.actor_losses, log.critic_losses))]
    (d / "pretrain.csv").write_text("\n".join(lines) + "\n")
    return bc, actor, critic, log


def run_label(method: str, tau: float, cfg: ExperimentConfig) -> str:
    if method == "bc":
        return "bc"
    return "mrfil" if tau == cfg.train.tau else f"mrfil-tau{tau:g}"


def stage_train(cfg: ExperimentConfig, out, method: str = "mrfil", tau: float | None = None):
    """Online MRFIL training (or a BC-only evaluation) from the pre-trained artifacts."""
    if method not in ("mrfil", "bc"):
        raise ConfigError(f"unknown method {method!r}; choose mrfil or bc")
    tau = cfg.train.tau if tau is None else float(tau)
    _, ens, reward = load_dynamics(Path(out) / "dynamics")
    pre = Path(out) / "pretrain"
    tc = dataclasses.replace(cfg.train, tau=tau)
    bc = load_policy(pre, "bc", "pretrain")
    seeds = derive_seeds(cfg.seed)
    env = build_env(cfg)
    run_dir = Path(out) / "runs" / run_label(method, tau, cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    if method == "bc":
        ret = evaluate(env, bc.act, tc.eval_episodes, seeds["eval"])
        metrics = MetricsLog(evals=[(0, ret)])
        policy = bc
    else:
        policy = load_policy(pre, "actor", "pretrain", tc.alpha)
        critic = load_critic(pre, "pretrain", tc.critic_lr)
        pool = ReplayPool(tc.replay_capacity, env.state_dim, env.action_dim)
        metrics = mrfil_train(policy, critic, bc, ens, reward, env, pool, tc, seeds["train"],
                              eval_seed=seeds["eval"])
        save_params(critic.net, run_dir / "critic.bin")
    (run_dir / "metrics.csv").write_text(metrics.to_csv())
    (run_dir / "eval.csv").write_text(metrics.evals_csv())
    save_policy(policy, run_dir, "policy")
    return metrics


def expert_return(cfg: ExperimentConfig) -> float:
    """Deterministic-evaluation return of the demonstrator on the evaluation episodes."""
    env = build_env(cfg)
    return evaluate(env, lambda obs: expert_policy(env, obs), cfg.train.eval_episodes,
                    derive_seeds(cfg.seed)["eval"])


def run_pipeline(cfg: ExperimentConfig, out, methods=(("mrfil", None),)) -> dict:
    write_run_header(cfg, out)
    stage_gen_demos(cfg, out)
    stage_train_dynamics(cfg, out)
    stage_pretrain(cfg, out)
    return {run_label(m, cfg.train.tau if t is None else t, cfg): stage_train(cfg, out, m, t)
            for m, t in methods}
