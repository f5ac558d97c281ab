"""Actor, critic, behaviour cloning, model-based pre-training and the online loop.

The actor step descends

    L = -log pi(a|s) * A  -  c_ent * H(pi(.|s))  +  tau * ||mu_bc(s) - mu(s)||_2

averaged over a replay batch, with A = r + gamma Q(s', a'~pi) - Q(s, a) held
constant. The critic takes semi-gradient TD steps toward r + gamma Q(s', a'~pi).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .demos import Batch, DemoSet, ReplayPool, Transition
from .dynmodel import EnsembleDynamics, RewardConfig, SingleDynamics, ensemble_reward
from .envs import ContinuousEnv, evaluate
from .errors import ConfigError
from .nn import AdamState, MlpParams, MlpSpec, adam_step, adam_update, mlp_backward, mlp_forward, mlp_init

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
METRICS_COLUMNS = ("episode", "env_steps", "task_return", "ensemble_return",
                   "actor_loss", "critic_loss", "supervised_term")


@dataclass
class TrainConfig:
    alpha: float = 1e-4  # actor learning rate
    critic_lr: float = 3e-4
    gamma: float = 0.99
    tau: float = 1.0
    entropy_coeff: float = 0.01
    exploration_noise_std: float = 0.3
    branch_count: int = 50
    explore_len: int = 5
    exploit_len: int = 20
    batch_size: int = 256
    max_env_steps: int = 50_000
    hidden: int = 64
    init_log_std: float = -1.0
    replay_capacity: int = 100_000
    warmup: int = 0
    eval_every: int = 5  # episodes between deterministic evaluations
    eval_episodes: int = 10
    plateau_patience: int = 20
    target_polyak: float = 0.995  # 0 disables the target critic
    advantage_norm: bool = False  # standardise advantages within each actor batch

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        for name in ("alpha", "critic_lr", "batch_size", "hidden", "replay_capacity", "eval_episodes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("tau", "entropy_coeff", "exploration_noise_std", "branch_count", "explore_len",
                     "exploit_len", "max_env_steps", "warmup", "eval_every", "plateau_patience"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0.0 <= self.target_polyak < 1.0:
            raise ConfigError("target_polyak must lie in [0, 1)")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass
class GaussianPolicy:
    """Diagonal Gaussian with an MLP mean and a state-independent log std.

    The network output passes through ``tanh`` scaled to the action bounds, so
    the mean always lies inside the action box.
    """

    mean_net: MlpParams
    log_std: np.ndarray
    action_low: float = -1.0
    action_high: float = 1.0
    mean_opt: AdamState | None = field(default=None, repr=False)
    std_opt: AdamState | None = field(default=None, repr=False)

    @classmethod
    def create(cls, state_dim: int, action_dim: int, seed: int, hidden: int = 64, depth: int = 2,
               init_log_std: float = -1.0, action_low: float = -1.0, action_high: float = 1.0,
               lr: float = 3e-4):
        net = mlp_init(MlpSpec.build(state_dim, action_dim, hidden, depth), seed)
        log_std = np.full(action_dim, float(np.clip(init_log_std, LOG_STD_MIN, LOG_STD_MAX)))
        return cls(net, log_std, action_low, action_high,
                   AdamState.for_params(net, lr=lr), AdamState.for_arrays([log_std], lr=lr))

    @property
    def state_dim(self) -> int:
        return self.mean_net.spec.n_in

    @property
    def action_dim(self) -> int:
        return self.mean_net.spec.n_out

    def mean(self, states) -> np.ndarray:
        return self.mean_with_cache(states)[0]

    def mean_with_cache(self, states):
        """Mean squashed into the action box, plus what backprop needs.

        Returns ``(mu, cache, dmu_dpre)`` where ``dmu_dpre`` is the elementwise
        derivative of the squash with respect to the network output.
        """
        pre, cache = mlp_forward(self.mean_net, states, return_cache=True)
        mid = 0.5 * (self.action_high + self.action_low)
        half = 0.5 * (self.action_high - self.action_low)
        t = np.tanh(pre)
        return mid + half * t, cache, half * (1.0 - t * t)

    def mean_backward(self, states, mean_cotangent, cache, dmu_dpre) -> MlpParams:
        grads, _ = mlp_backward(self.mean_net, states, mean_cotangent * dmu_dpre, cache)
        return grads

    def act(self, state) -> np.ndarray:
        """Deterministic action: the clipped mean."""
        return np.clip(self.mean(state), self.action_low, self.action_high)

    def log_prob(self, states, actions) -> np.ndarray:
        z = (np.asarray(actions) - self.mean(states)) / np.exp(self.log_std)
        return (-0.5 * z ** 2 - self.log_std - HALF_LOG_2PI).sum(-1)

    def entropy(self) -> float:
        return float(np.sum(self.log_std + 0.5 + HALF_LOG_2PI))

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.mean_net.copy(), self.log_std.copy(), self.action_low, self.action_high,
                              None if self.mean_opt is None else self.mean_opt.copy(),
                              None if self.std_opt is None else self.std_opt.copy())


def policy_sample(policy: GaussianPolicy, state, seed, clip: bool = True) -> tuple[np.ndarray, float | np.ndarray]:
    """Draw ``mean + std * eps``; return the (clipped) action and the log-density of the raw draw.

    ``clip=False`` returns the raw draw itself, which is what the learners
    store: the environment clips on execution and the stored action keeps a
    proper Gaussian likelihood.
    """
    rng = _rng(seed)
    mu = policy.mean(state)
    std = np.exp(policy.log_std)
    eps = rng.standard_normal(np.shape(mu))
    raw = mu + std * eps
    logp = (-0.5 * eps ** 2 - policy.log_std - HALF_LOG_2PI).sum(-1)
    return (np.clip(raw, policy.action_low, policy.action_high) if clip else raw), logp


@dataclass
class QFunction:
    net: MlpParams
    opt: AdamState | None = field(default=None, repr=False)
    target: MlpParams | None = field(default=None, repr=False)

    @classmethod
    def create(cls, state_dim: int, action_dim: int, seed: int, hidden: int = 64, depth: int = 2,
               lr: float = 3e-4):
        net = mlp_init(MlpSpec.build(state_dim + action_dim, 1, hidden, depth), seed)
        return cls(net, AdamState.for_params(net, lr=lr))

    def __call__(self, states, actions, params: MlpParams | None = None) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=1)
        q = mlp_forward(self.net if params is None else params, x)[:, 0]
        return q if np.ndim(states) > 1 else q[0]

    def copy(self) -> "QFunction":
        return QFunction(self.net.copy(), None if self.opt is None else self.opt.copy(),
                         None if self.target is None else self.target.copy())


# Behaviour-cloned stand-in for the expert policy; read-only during training.
BcPolicy = GaussianPolicy


def bc_train(demos: DemoSet, epochs: int = 100, seed: int = 0, hidden: int = 64, lr: float = 1e-3,
             batch_size: int = 128, init_log_std: float = -1.0, action_low: float = -1.0,
             action_high: float = 1.0, return_log: bool = False):
    """Regress the policy mean onto expert actions (MSE, minibatch Adam)."""
    if len(demos) == 0 or demos.n_transitions == 0:
        raise ConfigError("cannot behaviour-clone from an empty demo set")
    s, a, _ = demos.arrays()
    bc = GaussianPolicy.create(s.shape[1], a.shape[1], seed, hidden, 2, init_log_std,
                               action_low, action_high, lr)
    rng = np.random.default_rng(seed + 1)
    log = []
    for _ in range(epochs):
        order = rng.permutation(len(s))
        for start in range(0, len(s), batch_size):
            idx = order[start:start + batch_size]
            grads, _ = bc_gradient(bc, s[idx], a[idx])
            bc.mean_net, bc.mean_opt = adam_step(bc.mean_net, grads, bc.mean_opt)
        log.append(float(np.mean((bc.mean(s) - a) ** 2)))
    return (bc, log) if return_log else bc


def bc_gradient(policy: GaussianPolicy, states, targets) -> tuple[MlpParams, float]:
    """Gradient of the mean squared error between the policy mean and ``targets``."""
    mu, cache, dmu = policy.mean_with_cache(states)
    diff = mu - targets
    grads = policy.mean_backward(states, 2.0 * diff / diff.size, cache, dmu)
    return grads, float(np.mean(diff ** 2))


# ---------------------------------------------------------------- actor / critic

@dataclass
class ActorStep:
    pg_term: float = 0.0
    supervised_term: float = 0.0
    loss: float = 0.0
    skipped: bool = False
    pg_grad: MlpParams | None = None
    supervised_grad: MlpParams | None = None
    total_grad: MlpParams | None = None
    log_std_grad: np.ndarray | None = None


def actor_gradients(policy: GaussianPolicy, bc: GaussianPolicy | None, states, actions, advantages,
                    config: TrainConfig, split: bool = False) -> ActorStep:
    """Loss terms and gradients of the actor objective for fixed advantages.

    With ``split`` the mean-network gradient is also returned as its two
    pieces, the policy-gradient part (``pg_grad``) and the unweighted
    supervised part (``supervised_grad``); ``total_grad = pg_grad + tau * supervised_grad``.
    """
    states = np.atleast_2d(states)
    actions = np.atleast_2d(actions)
    adv = np.asarray(advantages, dtype=float).reshape(-1)
    n = len(states)
    mu, cache, dmu = policy.mean_with_cache(states)
    std = np.exp(policy.log_std)
    z = (actions - mu) / std
    logp = (-0.5 * z ** 2 - policy.log_std - HALF_LOG_2PI).sum(-1)
    pg_loss = float(-(adv * logp).mean() - config.entropy_coeff * policy.entropy())
    cot_pg = -(adv[:, None] * z / std) / n

    if bc is not None and config.tau > 0:
        d = bc.mean(states) - mu
        norms = np.linalg.norm(d, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        cot_sup = np.where(norms[:, None] > 0, -d / safe[:, None], 0.0) / n
        sup = float(norms.mean())
    else:
        cot_sup = np.zeros_like(mu)
        sup = 0.0 if bc is None else float(np.linalg.norm(bc.mean(states) - mu, axis=1).mean())

    step = ActorStep(pg_term=pg_loss, supervised_term=sup, loss=pg_loss + config.tau * sup)
    step.total_grad = policy.mean_backward(states, cot_pg + config.tau * cot_sup, cache, dmu)
    if split:
        step.pg_grad = policy.mean_backward(states, cot_pg, cache, dmu)
        step.supervised_grad = policy.mean_backward(states, cot_sup, cache, dmu)
    step.log_std_grad = -(adv[:, None] * (z ** 2 - 1.0)).mean(0) - config.entropy_coeff
    return step


def advantages(policy: GaussianPolicy, critic: QFunction, batch: Batch, gamma: float, rng) -> np.ndarray:
    next_a, _ = policy_sample(policy, batch.next_states, rng)
    q_next = critic(batch.next_states, next_a, critic.target)
    return batch.rewards + gamma * (~batch.dones) * q_next - critic(batch.states, batch.actions)


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-std advantages; a batch of one (or constant values) is only centred."""
    adv = adv - adv.mean()
    sd = adv.std()
    return adv / sd if sd > 1e-8 else adv


def actor_update(policy: GaussianPolicy, critic: QFunction, bc: GaussianPolicy | None, batch: Batch,
                 config: TrainConfig, seed=None) -> ActorStep:
    """One Adam step on the actor objective; mutates ``policy`` in place."""
    if len(batch) == 0:
        raise ConfigError("actor update needs a non-empty batch")
    adv = advantages(policy, critic, batch, config.gamma, _rng(seed))
    if not np.all(np.isfinite(adv)):
        return ActorStep(skipped=True)
    if config.advantage_norm:
        adv = normalize_advantages(adv)
    step = actor_gradients(policy, bc, batch.states, batch.actions, adv, config)
    policy.mean_opt.lr = config.alpha
    policy.std_opt.lr = config.alpha
    policy.mean_net, policy.mean_opt = adam_step(policy.mean_net, step.total_grad, policy.mean_opt)
    (log_std,), policy.std_opt = adam_update([policy.log_std], [step.log_std_grad], policy.std_opt)
    policy.log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    return step


@dataclass
class CriticStep:
    loss: float = 0.0
    td_mean: float = 0.0
    skipped: bool = False


def critic_update(critic: QFunction, policy: GaussianPolicy, batch: Batch, config: TrainConfig,
                  seed=None) -> CriticStep:
    """Semi-gradient TD step on ``mean((y - Q(s, a))^2)``; mutates ``critic`` in place."""
    if len(batch) == 0:
        raise ConfigError("critic update needs a non-empty batch")
    next_a, _ = policy_sample(policy, batch.next_states, _rng(seed))
    y = batch.rewards + config.gamma * (~batch.dones) * critic(batch.next_states, next_a, critic.target)
    if not np.all(np.isfinite(y)):
        return CriticStep(skipped=True)
    x = np.concatenate([batch.states, batch.actions], axis=1)
    q, cache = mlp_forward(critic.net, x, return_cache=True)
    td = y - q[:, 0]
    grads, _ = mlp_backward(critic.net, x, (-2.0 * td / len(td))[:, None], cache)
    critic.opt.lr = config.critic_lr
    critic.net, critic.opt = adam_step(critic.net, grads, critic.opt)
    if config.target_polyak > 0:
        k = config.target_polyak
        critic.target = MlpParams.from_arrays(
            [k * t + (1 - k) * p for t, p in zip(critic.target.arrays(), critic.net.arrays())])
    return CriticStep(float(np.mean(td ** 2)), float(np.mean(td)))


def init_target(critic: QFunction, config: TrainConfig) -> None:
    if config.target_polyak > 0 and critic.target is None:
        critic.target = critic.net.copy()


# ---------------------------------------------------------------- model-based pre-training

@dataclass
class PretrainLog:
    branches: int = 0
    steps: int = 0
    rewards: list[float] = field(default_factory=list)
    actor_losses: list[float] = field(default_factory=list)
    critic_losses: list[float] = field(default_factory=list)

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.rewards)) if self.rewards else math.nan


def mbsr_pretrain(policy: GaussianPolicy, critic: QFunction, m0: SingleDynamics, ensemble: EnsembleDynamics,
                  reward_config: RewardConfig, demos: DemoSet, config: TrainConfig, seed=0,
                  bc: GaussianPolicy | None = None, env: ContinuousEnv | None = None) -> PretrainLog:
    """Offline actor-critic pre-training on short branched rollouts of the learned model.

    Each branch starts at a demonstration state. It first runs ``explore_len``
    steps with the policy mean perturbed by ``exploration_noise_std`` Gaussian
    noise, then ``exploit_len`` steps sampling the policy itself. Next states
    come from ``m0``, rewards from the ensemble, and the actor and critic are
    updated after every model step from a pool of model transitions. ``env``,
    if given, is only consulted for its state box; it is never stepped.
    """
    if not m0.trained:
        raise ConfigError("single dynamics model m0 must be trained before pre-training")
    rng = _rng(seed)
    log = PretrainLog()
    if config.branch_count == 0:
        return log
    init_target(critic, config)
    starts, _, _ = demos.arrays()
    box = env.state_box if env is not None else None
    pool = ReplayPool(config.replay_capacity, policy.state_dim, policy.action_dim)
    for _ in range(config.branch_count):
        s = starts[rng.integers(len(starts))]
        for phase, length in (("explore", config.explore_len), ("exploit", config.exploit_len)):
            for _ in range(length):
                if phase == "explore":
                    a = policy.mean(s) + config.exploration_noise_std * rng.standard_normal(policy.action_dim)
                else:
                    a, _ = policy_sample(policy, s, rng, clip=False)
                executed = np.clip(a, policy.action_low, policy.action_high)
                s2 = m0.predict(s, executed)
                if box is not None:
                    s2 = np.clip(s2, -box, box)
                r = ensemble_reward(ensemble, reward_config, s, executed)
                pool.push(Transition(s, a, s2, r, False))
                batch = pool.sample(config.batch_size, rng)
                cs = critic_update(critic, policy, batch, config, rng)
                ac = actor_update(policy, critic, bc, batch, config, rng)
                log.rewards.append(r)
                log.critic_losses.append(cs.loss)
                log.actor_losses.append(ac.loss)
                log.steps += 1
                s = s2
        log.branches += 1
    return log


# ---------------------------------------------------------------- online loop

@dataclass
class MetricsLog:
    rows: list[dict] = field(default_factory=list)
    evals: list[tuple[int, float]] = field(default_factory=list)  # (env_steps, eval task return)
    env_steps: int = 0
    stopped_early: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for row in self.rows:
            w.writerow([_fmt(row[c]) for c in METRICS_COLUMNS])
        return buf.getvalue()

    def evals_csv(self) -> str:
        lines = ["env_steps,eval_return"]
        lines += [f"{n},{_fmt(r)}" for n, r in self.evals]
        return "\n".join(lines) + "\n"

    @property
    def final_eval(self) -> float:
        return self.evals[-1][1] if self.evals else math.nan


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def mrfil_train(policy: GaussianPolicy, critic: QFunction, bc: GaussianPolicy | None, ensemble: EnsembleDynamics,
                reward_config: RewardConfig, env: ContinuousEnv, pool: ReplayPool, config: TrainConfig,
                seed=0, eval_env: ContinuousEnv | None = None, eval_seed: int | None = None) -> MetricsLog:
    """Online training in the real environment with ensemble rewards.

    Every real step samples an action, stores the transition with its ensemble
    reward, then applies one critic and one actor update from a replay batch.
    Deterministic evaluations run every ``eval_every`` episodes on a separate
    copy of the environment and do not count as interactions. Training stops
    at ``max_env_steps`` real steps or after ``plateau_patience`` evaluations
    without improvement.
    """
    rng = _rng(seed)
    episode_seed = int(rng.integers(2 ** 31))
    if eval_seed is None:
        eval_seed = int(rng.integers(2 ** 31))
    eval_env = (eval_env or env).clone()
    metrics = MetricsLog()
    init_target(critic, config)
    best, since_best = -math.inf, 0
    episode = 0
    start_steps = env.interactions
    while metrics.env_steps < config.max_env_steps:
        obs = env.reset(episode_seed + episode)
        done = False
        ens_ret, a_losses, c_losses, sups = 0.0, [], [], []
        while not done and metrics.env_steps < config.max_env_steps:
            a, _ = policy_sample(policy, obs, rng, clip=False)
            nxt, done = env.step(a)
            metrics.env_steps += 1
            r = ensemble_reward(ensemble, reward_config, obs, np.clip(a, env.action_low, env.action_high))
            ens_ret += r
            pool.push(Transition(obs, a, nxt, r, env.terminal))
            if len(pool) > config.warmup:
                batch = pool.sample(config.batch_size, rng)
                cs = critic_update(critic, policy, batch, config, rng)
                ac = actor_update(policy, critic, bc, batch, config, rng)
                c_losses.append(cs.loss)
                a_losses.append(ac.loss)
                sups.append(ac.supervised_term)
            obs = nxt
        if not done:
            break  # interaction budget exhausted mid-episode
        metrics.rows.append({
            "episode": episode, "env_steps": metrics.env_steps, "task_return": env.task_return(),
            "ensemble_return": ens_ret, "actor_loss": _mean(a_losses), "critic_loss": _mean(c_losses),
            "supervised_term": _mean(sups)})
        episode += 1
        if config.eval_every and episode % config.eval_every == 0:
            ret = evaluate(eval_env, policy.act, config.eval_episodes, eval_seed)
            metrics.evals.append((metrics.env_steps, ret))
            if ret > best + 1e-12:
                best, since_best = ret, 0
            else:
                since_best += 1
                if config.plateau_patience and since_best >= config.plateau_patience:
                    metrics.stopped_early = True
                    break
    if metrics.rows and not metrics.stopped_early and (not metrics.evals or metrics.evals[-1][0] != metrics.env_steps):
        metrics.evals.append((metrics.env_steps, evaluate(eval_env, policy.act, config.eval_episodes, eval_seed)))
    assert env.interactions - start_steps == metrics.env_steps
    return metrics


def _mean(xs) -> float:
    return float(np.mean(xs)) if xs else math.nan
