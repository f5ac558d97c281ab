"""Learned forward models and the ensemble-disagreement reward.

A dynamics model maps ``concat(s, a)`` to the state change ``s' - s``. The
ensemble's reward is binary: 1 where its members agree (prediction variance at
or below a calibrated threshold), 0 elsewhere.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .demos import DemoSet
from .errors import ConfigError, MissingArtifactError, NumericalError
from .nn import (AdamState, MlpParams, MlpSpec, adam_step, load_params, mlp_backward, mlp_forward,
                 mlp_init, save_params)

ARTIFACT_VERSION = 1


@dataclass
class SingleDynamics:
    spec: MlpSpec
    params: MlpParams
    seed: int
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray
    trained: bool = False

    @classmethod
    def create(cls, state_dim: int, action_dim: int, seed: int, hidden: int = 64, depth: int = 4):
        spec = MlpSpec.build(state_dim + action_dim, state_dim, hidden, depth)
        n_in = state_dim + action_dim
        return cls(spec, mlp_init(spec, seed), seed, np.zeros(n_in), np.ones(n_in),
                   np.zeros(state_dim), np.ones(state_dim))

    @property
    def state_dim(self) -> int:
        return self.spec.n_out

    @property
    def action_dim(self) -> int:
        return self.spec.n_in - self.spec.n_out

    def _inputs(self, states, actions) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=1)
        if x.shape[1] != self.spec.n_in:
            raise ConfigError(f"dynamics model expects {self.spec.n_in} inputs, got {x.shape[1]}")
        return (x - self.in_mean) / self.in_std

    def predict_delta(self, states, actions) -> np.ndarray:
        single = np.ndim(states) == 1
        out = mlp_forward(self.params, self._inputs(states, actions)) * self.out_std + self.out_mean
        return out[0] if single else out

    def predict(self, states, actions) -> np.ndarray:
        return np.asarray(states, dtype=float) + self.predict_delta(states, actions)

    def fit_normalizer(self, states, actions, next_states) -> None:
        x = np.concatenate([states, actions], axis=1)
        y = next_states - states
        self.in_mean, self.in_std = x.mean(0), _safe_std(x)
        # constant target dims get scale 0, so the prediction is exactly their training mean
        self.out_mean, self.out_std = y.mean(0), np.where(y.std(0) > 1e-12, _safe_std(y), 0.0)


def _safe_std(x: np.ndarray) -> np.ndarray:
    sd = x.std(0)
    return np.where(sd > 1e-8, sd, 1.0)


@dataclass
class EnsembleDynamics:
    members: list[SingleDynamics]

    def __post_init__(self):
        if len(self.members) < 2:
            raise ConfigError("an ensemble needs at least two members")
        if len({m.spec for m in self.members}) != 1:
            raise ConfigError("ensemble members must share one network spec")

    @classmethod
    def create(cls, state_dim: int, action_dim: int, n: int = 5, seed: int = 0, hidden: int = 64, depth: int = 4):
        return cls([SingleDynamics.create(state_dim, action_dim, member_seed(seed, i), hidden, depth)
                    for i in range(n)])

    def __len__(self) -> int:
        return len(self.members)

    @property
    def trained(self) -> bool:
        return all(m.trained for m in self.members)


def member_seed(seed: int, index: int) -> int:
    return seed * 7919 + 101 * (index + 1)


def _mse(model: SingleDynamics, s, a, s2) -> float:
    return float(np.mean((model.predict_delta(s, a) - (s2 - s)) ** 2))


def _train_member(model: SingleDynamics, train: DemoSet, eval: DemoSet | None, epochs: int, seed: int,
                  batch_size: int, lr: float) -> list[tuple[int, float, float]]:
    s, a, s2 = train.arrays()
    if s.shape[1] != model.state_dim or a.shape[1] != model.action_dim:
        raise ConfigError(f"demo dims ({s.shape[1]}, {a.shape[1]}) do not match model "
                          f"({model.state_dim}, {model.action_dim})")
    ev = eval.arrays() if eval is not None and len(eval) else None
    x = model._inputs(s, a)
    scale = np.where(model.out_std > 0, model.out_std, 1.0)
    y = np.where(model.out_std > 0, ((s2 - s) - model.out_mean) / scale, 0.0)
    rng = np.random.default_rng(seed)
    opt = AdamState.for_params(model.params, lr=lr)
    params = model.params
    n = len(x)
    log = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            out, cache = mlp_forward(params, x[idx], return_cache=True)
            # gradient of the per-batch mean squared error in normalised units
            cot = 2.0 * (out - y[idx]) / (len(idx) * y.shape[1])
            grads, _ = mlp_backward(params, x[idx], cot, cache)
            params, opt = adam_step(params, grads, opt)
        if not params.is_finite():
            raise NumericalError(f"dynamics model diverged at epoch {epoch}")
        model.params = params
        log.append((epoch, _mse(model, s, a, s2), _mse(model, *ev) if ev is not None else math.nan))
    model.trained = True
    return log


def train_dynamics(model, train: DemoSet, eval: DemoSet | None = None, epochs: int = 50, seed: int = 0,
                   batch_size: int = 128, lr: float = 1e-3):
    """Fit one model or every member of an ensemble by minibatch Adam on state-delta MSE.

    Normalisation statistics come from ``train`` and are shared across members.
    Returns the trained model and its per-epoch ``(epoch, train_mse, eval_mse)`` log
    (a list of logs, one per member, for an ensemble).
    """
    if len(train) == 0 or train.n_transitions == 0:
        raise ConfigError("cannot train dynamics on an empty demo set")
    s, a, s2 = train.arrays()
    members = model.members if isinstance(model, EnsembleDynamics) else [model]
    for i, m in enumerate(members):
        if s.shape[1] != m.state_dim or a.shape[1] != m.action_dim:
            raise ConfigError(f"demo dims ({s.shape[1]}, {a.shape[1]}) do not match model "
                              f"({m.state_dim}, {m.action_dim})")
        m.fit_normalizer(s, a, s2)
    logs = [_train_member(m, train, eval, epochs, member_seed(seed, i) + 17, batch_size, lr)
            for i, m in enumerate(members)]
    return model, (logs if isinstance(model, EnsembleDynamics) else logs[0])


def ensemble_predictions(ensemble: EnsembleDynamics, states, actions) -> np.ndarray:
    """Member predictions of ``s'``, shape ``(n_members, batch, state_dim)``."""
    s = np.atleast_2d(states)
    preds = np.stack([m.predict_delta(s, np.atleast_2d(actions)) for m in ensemble.members])
    if not np.all(np.isfinite(preds)):
        raise NumericalError("ensemble member produced a non-finite prediction")
    return preds + s


def ensemble_variance(ensemble: EnsembleDynamics, states, actions):
    """Unbiased across-member variance of predicted ``s'``, averaged over state dims."""
    if not ensemble.trained:
        raise ConfigError("ensemble is not trained")
    single = np.ndim(states) == 1
    preds = ensemble_predictions(ensemble, states, actions)
    # centre on one member first so identical members give exactly zero
    var = (preds - preds[0]).var(axis=0, ddof=1).mean(axis=-1)
    return float(var[0]) if single else var


@dataclass
class RewardConfig:
    threshold: float | None = None
    quantile: float = 0.95
    literal_eq2: bool = False
    aggregation: str = field(default="mean-of-per-dim-variance")

    def __post_init__(self):
        if not 0.0 < self.quantile <= 1.0:
            raise ConfigError(f"calibration quantile must lie in (0, 1], got {self.quantile}")

    @property
    def calibrated(self) -> bool:
        return self.threshold is not None and math.isfinite(self.threshold) and self.threshold > 0


def reward_from_variance(variance, config: RewardConfig):
    if not config.calibrated:
        raise ConfigError("reward threshold is not calibrated")
    v = np.asarray(variance)
    r = (v > config.threshold) if config.literal_eq2 else (v <= config.threshold)
    r = r.astype(float)
    return float(r) if r.ndim == 0 else r


def ensemble_reward(ensemble: EnsembleDynamics, config: RewardConfig, states, actions):
    """1 where the ensemble agrees (variance <= threshold), else 0.

    With ``config.literal_eq2`` the inequality is flipped (1 where variance > threshold).
    """
    return reward_from_variance(ensemble_variance(ensemble, states, actions), config)


def nearest_rank_quantile(values, q: float) -> float:
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if len(v) == 0:
        raise ConfigError("quantile of an empty set")
    rank = min(max(math.ceil(q * len(v)), 1), len(v))
    return float(v[rank - 1])


def calibrate_threshold(ensemble: EnsembleDynamics, held_out: DemoSet, quantile: float = 0.95,
                        literal_eq2: bool = False) -> RewardConfig:
    """Set the threshold to the nearest-rank ``quantile`` of held-out expert variances."""
    if len(held_out) == 0 or held_out.n_transitions == 0:
        raise ConfigError("cannot calibrate the reward threshold on an empty demo set")
    s, a, _ = held_out.arrays()
    th = nearest_rank_quantile(ensemble_variance(ensemble, s, a), quantile)
    if th <= 0:
        # identical members give zero variance everywhere; keep the threshold positive
        th = np.finfo(float).tiny
    return RewardConfig(th, quantile, literal_eq2)


# ---------------------------------------------------------------- persistence

def _model_meta(m: SingleDynamics) -> dict:
    return {"seed": m.seed, "in_mean": m.in_mean.tolist(), "in_std": m.in_std.tolist(),
            "out_mean": m.out_mean.tolist(), "out_std": m.out_std.tolist(), "trained": m.trained}


def _model_from(params: MlpParams, meta: dict) -> SingleDynamics:
    return SingleDynamics(params.spec, params, meta["seed"], np.array(meta["in_mean"]),
                          np.array(meta["in_std"]), np.array(meta["out_mean"]),
                          np.array(meta["out_std"]), meta["trained"])


def save_dynamics(directory, m0: SingleDynamics | None, ensemble: EnsembleDynamics,
                  reward: RewardConfig | None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {"version": ARTIFACT_VERSION, "members": [], "m0": None,
                "threshold": None if reward is None else reward.threshold,
                "quantile": None if reward is None else reward.quantile,
                "literal_eq2": False if reward is None else reward.literal_eq2}
    for i, m in enumerate(ensemble.members):
        save_params(m.params, d / f"member_{i}.bin")
        manifest["members"].append({"file": f"member_{i}.bin", **_model_meta(m)})
    if m0 is not None:
        save_params(m0.params, d / "m0.bin")
        manifest["m0"] = {"file": "m0.bin", **_model_meta(m0)}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dynamics(directory, stage: str = "train-dynamics"):
    """Inverse of :func:`save_dynamics`: returns ``(m0, ensemble, reward_config)``."""
    d = Path(directory)
    if not (d / "manifest.json").exists():
        raise MissingArtifactError(stage, d / "manifest.json")
    manifest = json.loads((d / "manifest.json").read_text())
    members = [_model_from(load_params(d / e["file"]), e) for e in manifest["members"]]
    m0 = None
    if manifest["m0"] is not None:
        m0 = _model_from(load_params(d / manifest["m0"]["file"]), manifest["m0"])
    reward = None
    if manifest["threshold"] is not None:
        reward = RewardConfig(manifest["threshold"], manifest["quantile"], manifest["literal_eq2"])
    return m0, EnsembleDynamics(members), reward
