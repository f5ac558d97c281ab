"""Tiny continuous-control tasks and exact tabular MDPs.

The continuous tasks have closed-form, noise-free internal dynamics. Gaussian
noise is added only to the observations handed to the agent, so the true
state (and therefore the task return) stays well defined.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError

ENV_KINDS = ("PointMass1D", "PointMass2D", "SpringPendulum")

# PD gains of the demonstrator, per kind: (proportional, derivative)
EXPERT_GAINS = {
    "PointMass1D": (2.0, 2.0),
    "PointMass2D": (2.0, 2.0),
    "SpringPendulum": (1.5, 1.5),
}


@dataclass
class ContinuousEnv:
    """A point mass (1-D or 2-D) or a damped spring pendulum.

    State layout is ``(positions..., velocities...)``. Positions are clipped to
    ``[-pos_limit, pos_limit]`` and velocities to ``[-vel_limit, vel_limit]``.
    The task return of an episode is the fraction of its ``horizon`` steps on
    which the true position lies within ``goal_radius`` of ``goal``.
    """

    kind: str = "PointMass2D"
    dt: float = 0.1
    horizon: int = 100
    obs_noise_std: float = 0.2
    action_low: float = -1.0
    action_high: float = 1.0
    goal_distance: float = 1.0
    goal_radius: float = 0.1
    pos_limit: float = 5.0
    vel_limit: float = 2.0
    goal_terminates: bool = False
    # spring pendulum constants
    stiffness: float = 1.0
    damping: float = 0.1

    # runtime
    state: np.ndarray = field(default=None, repr=False)
    t: int = field(default=0, repr=False)
    goal_steps: int = field(default=0, repr=False)
    interactions: int = field(default=0, repr=False)
    _rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ENV_KINDS:
            raise ConfigError(f"unknown env kind {self.kind!r}; choose from {ENV_KINDS}")
        if self.dt <= 0 or self.horizon < 1 or self.obs_noise_std < 0:
            raise ConfigError("need dt > 0, horizon >= 1 and obs_noise_std >= 0")
        if not self.action_low < self.action_high:
            raise ConfigError("action_low must be below action_high")
        if self.state is None:
            self.state = np.zeros(self.state_dim)

    @property
    def n_pos(self) -> int:
        return 2 if self.kind == "PointMass2D" else 1

    @property
    def state_dim(self) -> int:
        return 2 * self.n_pos

    @property
    def action_dim(self) -> int:
        return self.n_pos

    @property
    def env_id(self) -> str:
        return self.kind

    @property
    def goal(self) -> np.ndarray:
        return np.full(self.n_pos, self.goal_distance / np.sqrt(self.n_pos) if self.kind == "PointMass2D"
                       else self.goal_distance)

    @property
    def state_box(self) -> np.ndarray:
        return np.concatenate([np.full(self.n_pos, self.pos_limit), np.full(self.n_pos, self.vel_limit)])

    def clone(self) -> "ContinuousEnv":
        return copy.deepcopy(self)

    def transition(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        """Noise-free explicit-Euler step of the true state."""
        state = np.asarray(state, dtype=float)
        action = np.atleast_1d(np.asarray(action, dtype=float))
        if state.shape != (self.state_dim,) or action.shape != (self.action_dim,):
            raise ConfigError(f"state/action shapes {state.shape}/{action.shape} do not match {self.kind}")
        if not (np.all(np.isfinite(state)) and np.all(np.isfinite(action))):
            raise NumericalError("non-finite state or action passed to env step")
        action = np.clip(action, self.action_low, self.action_high)
        pos, vel = state[:self.n_pos], state[self.n_pos:]
        if self.kind == "SpringPendulum":
            accel = -self.stiffness * np.sin(pos) - self.damping * vel + action
        else:
            accel = action
        new_pos = np.clip(pos + vel * self.dt, -self.pos_limit, self.pos_limit)
        new_vel = np.clip(vel + accel * self.dt, -self.vel_limit, self.vel_limit)
        return np.concatenate([new_pos, new_vel])

    def in_goal(self, state: np.ndarray) -> bool:
        return bool(np.linalg.norm(np.asarray(state)[:self.n_pos] - self.goal) <= self.goal_radius)

    def observe(self, state: np.ndarray) -> np.ndarray:
        if self.obs_noise_std == 0:
            return state.copy()
        return state + self._rng.normal(0.0, self.obs_noise_std, size=state.shape)

    def reset(self, seed: int | None = None) -> np.ndarray:
        self._rng = np.random.default_rng(seed)
        self.state = np.zeros(self.state_dim)
        self.t = 0
        self.goal_steps = 0
        return self.observe(self.state)

    def step(self, action) -> tuple[np.ndarray, bool]:
        """Advance the true state; return the noisy observation and the done flag."""
        if self._rng is None:
            raise ConfigError("call reset() before step()")
        self.state = self.transition(self.state, action)
        self.t += 1
        self.interactions += 1
        reached = self.in_goal(self.state)
        self.goal_steps += reached
        done = self.t >= self.horizon or (self.goal_terminates and reached)
        return self.observe(self.state), done

    @property
    def terminal(self) -> bool:
        """True when the episode ended for a reason other than the time limit."""
        return self.goal_terminates and self.in_goal(self.state)

    def task_return(self) -> float:
        return self.goal_steps / self.horizon


def env_reset(env: ContinuousEnv, seed: int | None = None) -> np.ndarray:
    return env.reset(seed)


def env_step(env: ContinuousEnv, state, action) -> tuple[np.ndarray, bool]:
    """Pure dynamics for an explicit ``state``; ``done`` only flags the goal region."""
    nxt = env.transition(state, action)
    return nxt, env.goal_terminates and env.in_goal(nxt)


def expert_policy(env: ContinuousEnv, state, gains: tuple[float, float] | None = None) -> np.ndarray:
    """PD feedback toward the goal, clipped to the action bounds.

    The pendulum controller adds gravity (spring) compensation.
    """
    kp, kd = gains if gains is not None else EXPERT_GAINS[env.kind]
    state = np.asarray(state, dtype=float)
    pos, vel = state[:env.n_pos], state[env.n_pos:]
    action = kp * (env.goal - pos) - kd * vel
    if env.kind == "SpringPendulum":
        action = action + env.stiffness * np.sin(pos)
    return np.clip(action, env.action_low, env.action_high)


def rollout_return(env: ContinuousEnv, policy_fn, seed: int) -> float:
    """Run one episode with ``policy_fn(observation) -> action``; return the task return."""
    obs = env.reset(seed)
    done = False
    while not done:
        obs, done = env.step(policy_fn(obs))
    return env.task_return()


def evaluate(env: ContinuousEnv, policy_fn, n_episodes: int, seed: int) -> float:
    env = env.clone()
    return float(np.mean([rollout_return(env, policy_fn, seed * 100_003 + i) for i in range(n_episodes)]))


def make_env(kind: str = "PointMass2D", **kw) -> ContinuousEnv:
    return ContinuousEnv(kind=kind, **kw)


# ---------------------------------------------------------------- tabular MDPs

@dataclass
class TabularMdp:
    transition: np.ndarray  # (S, A, S'), rows sum to one
    reward: np.ndarray  # (S, A)
    gamma: float
    initial_distribution: np.ndarray  # (S,)

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.reward = np.asarray(self.reward, dtype=float)
        self.initial_distribution = np.asarray(self.initial_distribution, dtype=float)
        S, A = self.reward.shape
        if self.transition.shape != (S, A, S) or self.initial_distribution.shape != (S,):
            raise ConfigError("inconsistent tabular MDP shapes")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if np.any(self.transition < 0) or np.any(np.abs(self.transition.sum(-1) - 1.0) > 1e-12):
            raise ConfigError("transition rows must be probability vectors")
        if np.any(self.initial_distribution < 0) or abs(self.initial_distribution.sum() - 1.0) > 1e-12:
            raise ConfigError("initial distribution must be a probability vector")

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    def policy_transition(self, policy: np.ndarray) -> np.ndarray:
        return np.einsum("sa,sat->st", policy, self.transition)


def random_simplex(rng: np.random.Generator, shape, concentration: float = 1.0) -> np.ndarray:
    """Dirichlet draws along the last axis, renormalised so rows sum to one exactly-ish."""
    shape = tuple(np.atleast_1d(shape))
    x = rng.gamma(concentration, size=shape)
    x = np.maximum(x, 1e-300)
    return x / x.sum(-1, keepdims=True)


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float | None = None,
               binary_reward: bool = False) -> TabularMdp:
    gamma = rng.uniform(0.5, 0.95) if gamma is None else gamma
    P = random_simplex(rng, (n_states, n_actions, n_states))
    if binary_reward:
        R = (rng.random((n_states, n_actions)) < 0.5).astype(float)
    else:
        R = rng.uniform(-1.0, 1.0, (n_states, n_actions))
    return TabularMdp(P, R, gamma, random_simplex(rng, n_states))


def check_policy(policy: np.ndarray, n_states: int, n_actions: int) -> np.ndarray:
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (n_states, n_actions):
        raise ConfigError(f"policy shape {policy.shape} != {(n_states, n_actions)}")
    if np.any(policy < 0) or np.any(np.abs(policy.sum(1) - 1.0) > 1e-9):
        raise ConfigError("policy rows must be probability vectors")
    return policy


def tabular_policy_eval(mdp: TabularMdp, policy: np.ndarray) -> tuple[np.ndarray, float]:
    """Exact values from ``(I - gamma P_pi) v = r_pi``; returns ``(v, rho_0 . v)``."""
    policy = check_policy(policy, mdp.n_states, mdp.n_actions)
    if not mdp.gamma < 1.0:
        raise ConfigError("policy evaluation needs gamma < 1")
    P_pi = mdp.policy_transition(policy)
    r_pi = (policy * mdp.reward).sum(1)
    v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, r_pi)
    return v, float(mdp.initial_distribution @ v)
