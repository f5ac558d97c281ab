"""Expert demonstrations, train/eval splitting, CSV persistence and the replay pool."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import ContinuousEnv, expert_policy
from .errors import ConfigError

HEADER_RE = re.compile(
    r"^mrfil-demos v1, env=(?P<env>[^,]+), episodes=(?P<n>\d+), dims=(?P<s>\d+),(?P<a>\d+)"
    r"(?:, seed=(?P<seed>-?\d+))?$"
)


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    reward: float | None = None
    done: bool = False


@dataclass
class Episode:
    """One demonstration episode stored column-wise."""

    states: np.ndarray  # (T, state_dim)
    actions: np.ndarray  # (T, action_dim)
    next_states: np.ndarray  # (T, state_dim)
    dones: np.ndarray  # (T,) bool

    def __len__(self) -> int:
        return len(self.states)

    def transitions(self):
        for s, a, s2, d in zip(self.states, self.actions, self.next_states, self.dones):
            yield Transition(s, a, s2, None, bool(d))

    def __eq__(self, other) -> bool:
        return (isinstance(other, Episode)
                and all(np.array_equal(x, y) for x, y in zip(
                    (self.states, self.actions, self.next_states, self.dones),
                    (other.states, other.actions, other.next_states, other.dones))))


@dataclass
class DemoSet:
    episodes: list[Episode]
    env_id: str
    seed: int
    state_dim: int = 0
    action_dim: int = 0

    def __post_init__(self):
        if self.episodes:
            self.state_dim = self.episodes[0].states.shape[1]
            self.action_dim = self.episodes[0].actions.shape[1]

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def n_transitions(self) -> int:
        return sum(len(e) for e in self.episodes)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Concatenated ``(states, actions, next_states)`` over all episodes."""
        if not self.episodes:
            raise ConfigError("demo set is empty")
        return (np.concatenate([e.states for e in self.episodes]),
                np.concatenate([e.actions for e in self.episodes]),
                np.concatenate([e.next_states for e in self.episodes]))

    def transitions(self):
        for e in self.episodes:
            yield from e.transitions()


def generate_demos(env: ContinuousEnv, n_episodes: int, seed: int, expert=expert_policy) -> DemoSet:
    """Roll out the demonstrator from the origin; it sees the same noisy observations a learner would."""
    if n_episodes < 1:
        raise ConfigError(f"n_episodes must be >= 1, got {n_episodes}")
    env = env.clone()
    episodes = []
    for i in range(n_episodes):
        obs = env.reset(seed * 1_000_003 + i)
        states, actions, nexts, dones = [], [], [], []
        done = False
        while not done:
            action = np.atleast_1d(expert(env, obs))
            nxt, done = env.step(action)
            states.append(obs)
            actions.append(action)
            nexts.append(nxt)
            dones.append(done)
            obs = nxt
        episodes.append(Episode(np.array(states), np.array(actions), np.array(nexts), np.array(dones)))
    return DemoSet(episodes, env.env_id, seed)


def split_train_eval(demos: DemoSet, train_fraction: float, seed: int) -> tuple[DemoSet, DemoSet]:
    """Random episode-level split; the train side gets ``round(fraction * n)`` episodes."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(demos)
    if n < 2:
        raise ConfigError(f"need at least 2 episodes to split into train/eval, got {n}")
    n_train = min(max(int(round(train_fraction * n)), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    train = sorted(order[:n_train])
    held = sorted(order[n_train:])
    return (DemoSet([demos.episodes[i] for i in train], demos.env_id, demos.seed),
            DemoSet([demos.episodes[i] for i in held], demos.env_id, demos.seed))


def save_demos(demos: DemoSet, path) -> None:
    lines = [f"mrfil-demos v1, env={demos.env_id}, episodes={len(demos)}, "
             f"dims={demos.state_dim},{demos.action_dim}, seed={demos.seed}"]
    for ei, ep in enumerate(demos.episodes):
        for t in range(len(ep)):
            vals = [*ep.states[t], *ep.actions[t], *ep.next_states[t]]
            lines.append(",".join([str(ei), str(t), *(format(v, ".17g") for v in vals),
                                   "1" if ep.dones[t] else "0"]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_demos(path) -> DemoSet:
    text = Path(path).read_text().splitlines()
    if not text:
        raise ConfigError(f"{path}: empty demo file")
    m = HEADER_RE.match(text[0].strip())
    if m is None:
        raise ConfigError(f"{path}: bad header {text[0]!r}")
    ds, da, n_eps = int(m["s"]), int(m["a"]), int(m["n"])
    rows: dict[int, list] = {}
    for line in text[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3 + 2 * ds + da:
            raise ConfigError(f"{path}: row has {len(parts)} fields, expected {3 + 2 * ds + da}")
        rows.setdefault(int(parts[0]), []).append(parts)
    if len(rows) != n_eps:
        raise ConfigError(f"{path}: header says {n_eps} episodes, found {len(rows)}")
    episodes = []
    for ei in sorted(rows):
        arr = np.array([[float(v) for v in r[2:-1]] for r in sorted(rows[ei], key=lambda r: int(r[1]))])
        dones = np.array([r[-1] == "1" for r in sorted(rows[ei], key=lambda r: int(r[1]))])
        episodes.append(Episode(arr[:, :ds], arr[:, ds:ds + da], arr[:, ds + da:], dones))
    seed = int(m["seed"]) if m["seed"] is not None else 0
    return DemoSet(episodes, m["env"], seed, ds, da)


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return len(self.states)


@dataclass
class ReplayPool:
    """FIFO ring buffer; sampling is uniform with replacement."""

    capacity: int
    state_dim: int
    action_dim: int
    _s: np.ndarray = field(init=False, repr=False)
    _a: np.ndarray = field(init=False, repr=False)
    _r: np.ndarray = field(init=False, repr=False)
    _s2: np.ndarray = field(init=False, repr=False)
    _d: np.ndarray = field(init=False, repr=False)
    size: int = field(init=False, default=0)
    _head: int = field(init=False, default=0, repr=False)

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigError("replay capacity must be positive")
        c = self.capacity
        self._s = np.zeros((c, self.state_dim))
        self._a = np.zeros((c, self.action_dim))
        self._r = np.zeros(c)
        self._s2 = np.zeros((c, self.state_dim))
        self._d = np.zeros(c, dtype=bool)

    def __len__(self) -> int:
        return self.size

    def push(self, tr: Transition) -> None:
        i = self._head
        self._s[i] = tr.state
        self._a[i] = tr.action
        self._r[i] = 0.0 if tr.reward is None else tr.reward
        self._s2[i] = tr.next_state
        self._d[i] = tr.done
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _ordered(self) -> np.ndarray:
        # slot indices oldest -> newest
        start = self._head if self.size == self.capacity else 0
        return (start + np.arange(self.size)) % self.capacity

    def contents(self) -> list[Transition]:
        return [Transition(self._s[i].copy(), self._a[i].copy(), self._s2[i].copy(),
                           float(self._r[i]), bool(self._d[i])) for i in self._ordered()]

    def sample(self, batch_size: int, rng) -> Batch:
        if self.size == 0:
            raise ConfigError("cannot sample from an empty replay pool")
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        idx = self._ordered()[rng.integers(0, self.size, size=batch_size)]
        return Batch(self._s[idx], self._a[idx], self._r[idx], self._s2[idx], self._d[idx])


def replay_push(pool: ReplayPool, tr: Transition) -> None:
    pool.push(tr)


def replay_sample(pool: ReplayPool, batch_size: int, seed) -> Batch:
    return pool.sample(batch_size, seed)
