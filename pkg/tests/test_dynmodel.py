import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrfil.demos import DemoSet, Episode, generate_demos
from mrfil.dynmodel import (EnsembleDynamics, RewardConfig, SingleDynamics, calibrate_threshold,
                            ensemble_reward, ensemble_variance, load_dynamics, nearest_rank_quantile,
                            reward_from_variance, save_dynamics, train_dynamics)
from mrfil.errors import ConfigError, MissingArtifactError
from mrfil.nn import MlpParams


def _demo_set(states, actions, next_states):
    ep = Episode(np.asarray(states, float), np.asarray(actions, float), np.asarray(next_states, float),
                 np.zeros(len(states), bool))
    return DemoSet([ep], "PointMass1D", 0)


def _trained_copy(model):
    model.trained = True
    return model


def test_overfit_single_transition():
    demos = _demo_set([[0.3, -0.2]] * 8, [[0.5]] * 8, [[0.28, -0.15]] * 8)
    model = SingleDynamics.create(2, 1, 0, hidden=16, depth=2)
    _, log = train_dynamics(model, demos, epochs=500, seed=0, lr=1e-3)
    assert log[-1][1] < 1e-6


def test_zero_delta_dataset():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(40, 2))
    demos = _demo_set(s, rng.normal(size=(40, 1)), s)
    model = SingleDynamics.create(2, 1, 0, hidden=16, depth=2)
    _, log = train_dynamics(model, demos, epochs=20, seed=0)
    assert log[-1][1] < 1e-8
    np.testing.assert_array_equal(model.predict(s, np.zeros((40, 1))), s)


def test_train_rejects_dim_mismatch():
    demos = _demo_set([[0.0, 0.0]], [[0.0]], [[0.0, 0.0]])
    with pytest.raises(ConfigError):
        train_dynamics(SingleDynamics.create(4, 2, 0), demos, epochs=1)


def test_eval_mse_close_to_train(default_setup):
    for log in default_setup.ens_log:
        _, train_mse, eval_mse = log[-1]
        assert eval_mse < 10 * train_mse


def test_ensemble_training_is_deterministic(default_setup):
    ens = EnsembleDynamics.create(4, 2, 2, 9)
    ens2 = EnsembleDynamics.create(4, 2, 2, 9)
    train_dynamics(ens, default_setup.train, epochs=2, seed=9)
    train_dynamics(ens2, default_setup.train, epochs=2, seed=9)
    assert all(a.params == b.params for a, b in zip(ens.members, ens2.members))
    assert ens.members[0].params != ens.members[1].params


def _identical_ensemble(n=3):
    base = _trained_copy(SingleDynamics.create(2, 1, 4, hidden=8, depth=2))
    members = []
    for _ in range(n):
        m = SingleDynamics(base.spec, base.params.copy(), base.seed, base.in_mean, base.in_std,
                           base.out_mean, base.out_std, True)
        members.append(m)
    return EnsembleDynamics(members)


def test_identical_members_zero_variance_reward_one():
    ens = _identical_ensemble()
    s, a = np.random.default_rng(0).normal(size=(10, 2)), np.ones((10, 1))
    assert np.all(ensemble_variance(ens, s, a) == 0)
    assert np.all(ensemble_reward(ens, RewardConfig(threshold=1e-3), s, a) == 1.0)


def test_two_member_variance_formula():
    ens = _identical_ensemble(2)
    # shift the second member's output bias by d; predictions then differ by d exactly
    d = np.array([0.3, -1.2])
    m = ens.members[1]
    m.params = MlpParams(m.params.weights, [*m.params.biases[:-1], m.params.biases[-1] + d / m.out_std])
    var = ensemble_variance(ens, np.zeros(2), np.zeros(1))
    assert abs(var - np.mean(d ** 2 / 2)) < 1e-12


def test_untrained_ensemble_rejected():
    ens = EnsembleDynamics.create(2, 1, 2, 0)
    with pytest.raises(ConfigError):
        ensemble_variance(ens, np.zeros(2), np.zeros(1))


def test_ensemble_needs_two_members():
    with pytest.raises(ConfigError):
        EnsembleDynamics([SingleDynamics.create(2, 1, 0)])


def test_ood_variance_ratio(default_setup):
    s, a, _ = default_setup.held.arrays()
    v_in = ensemble_variance(default_setup.ensemble, s, a).mean()
    box = np.abs(default_setup.train.arrays()[0]).max(0)
    rng = np.random.default_rng(0)
    far = 10 * box * rng.choice([-1.0, 1.0], size=(500, 4))
    v_out = ensemble_variance(default_setup.ensemble, far, rng.uniform(-1, 1, (500, 2))).mean()
    assert v_out / v_in >= 5


def test_reward_codomain_and_boundary():
    cfg = RewardConfig(threshold=0.5)
    v = np.array([0.0, 0.5, 0.5000001, 10.0])
    np.testing.assert_array_equal(reward_from_variance(v, cfg), [1.0, 1.0, 0.0, 0.0])
    lit = RewardConfig(threshold=0.5, literal_eq2=True)
    np.testing.assert_array_equal(reward_from_variance(v, lit), [0.0, 0.0, 1.0, 1.0])


def test_uncalibrated_reward_rejected():
    with pytest.raises(ConfigError):
        reward_from_variance(1.0, RewardConfig())


def test_nearest_rank_quantile():
    assert nearest_rank_quantile(np.arange(1, 101), 0.95) == 95
    assert nearest_rank_quantile([3.0, 1.0, 2.0], 1.0) == 3.0
    assert nearest_rank_quantile([4.0], 0.01) == 4.0
    with pytest.raises(ConfigError):
        nearest_rank_quantile([], 0.5)


def test_quantile_one_rewards_all_held_out(default_setup):
    rc = calibrate_threshold(default_setup.ensemble, default_setup.held, 1.0)
    s, a, _ = default_setup.held.arrays()
    assert np.all(ensemble_reward(default_setup.ensemble, rc, s, a) == 1.0)


def test_calibrated_rate_on_held_out(default_setup):
    s, a, _ = default_setup.held.arrays()
    assert ensemble_reward(default_setup.ensemble, default_setup.reward, s, a).mean() >= 0.9


def test_calibrated_rate_on_fresh_expert_data(default_setup):
    fresh = generate_demos(default_setup.env, 30, 777)
    s, a, _ = fresh.arrays()
    rate = ensemble_reward(default_setup.ensemble, default_setup.reward, s, a).mean()
    assert 0.93 <= rate <= 1.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=50), st.floats(0.01, 1.0))
def test_quantile_is_order_statistic_and_permutation_invariant(values, q):
    th = nearest_rank_quantile(values, q)
    assert th in values
    assert nearest_rank_quantile(list(reversed(values)), q) == th
    assert np.mean(np.array(values) <= th) >= q - 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-6, 10), st.floats(1e-6, 10), st.floats(1e-6, 10))
def test_reward_is_monotone_in_variance(th, v1, v2):
    cfg = RewardConfig(threshold=th)
    lo, hi = sorted([v1, v2])
    assert reward_from_variance(lo, cfg) >= reward_from_variance(hi, cfg)


def test_reward_codomain_random_inputs(default_setup):
    rng = np.random.default_rng(1)
    s = rng.uniform(-5, 5, (100_000, 4))
    a = rng.uniform(-1, 1, (100_000, 2))
    r = ensemble_reward(default_setup.ensemble, default_setup.reward, s, a)
    assert set(np.unique(r)) <= {0.0, 1.0}


def test_variance_is_member_permutation_invariant(default_setup):
    ens = default_setup.ensemble
    s, a, _ = default_setup.held.arrays()
    flipped = EnsembleDynamics(list(reversed(ens.members)))
    np.testing.assert_allclose(ensemble_variance(flipped, s[:50], a[:50]),
                               ensemble_variance(ens, s[:50], a[:50]), rtol=1e-12, atol=1e-15)


def test_save_load_roundtrip(tmp_path, default_setup):
    save_dynamics(tmp_path / "dyn", default_setup.m0, default_setup.ensemble, default_setup.reward)
    m0, ens, rc = load_dynamics(tmp_path / "dyn")
    s, a, _ = default_setup.held.arrays()
    np.testing.assert_array_equal(m0.predict(s, a), default_setup.m0.predict(s, a))
    np.testing.assert_array_equal(ensemble_variance(ens, s, a), ensemble_variance(default_setup.ensemble, s, a))
    assert rc == default_setup.reward


def test_load_missing_names_stage(tmp_path):
    with pytest.raises(MissingArtifactError, match="train-dynamics"):
        load_dynamics(tmp_path / "nowhere")
