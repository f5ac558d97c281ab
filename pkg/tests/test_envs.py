import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrfil.envs import (TabularMdp, env_step, evaluate, expert_policy, make_env, random_mdp, random_simplex,
                        rollout_return, tabular_policy_eval)
from mrfil.errors import ConfigError


def test_reset_without_noise_is_origin():
    env = make_env("PointMass2D", obs_noise_std=0.0)
    np.testing.assert_array_equal(env.reset(0), np.zeros(4))


def test_reset_is_seed_deterministic():
    env = make_env("PointMass2D")
    np.testing.assert_array_equal(env.reset(5), env.reset(5))
    assert not np.array_equal(env.reset(5), env.reset(6))


def test_reset_noise_std():
    env = make_env("PointMass2D", obs_noise_std=0.2)
    obs = np.array([env.reset(s) for s in range(10_000)])
    sd = obs.std(0)
    assert np.all((sd > 0.19) & (sd < 0.21))


def test_point_mass_fixed_point_and_closed_form():
    env = make_env("PointMass1D", obs_noise_std=0.0)
    np.testing.assert_array_equal(env_step(env, np.zeros(2), np.zeros(1))[0], [0.0, 0.0])
    np.testing.assert_allclose(env_step(env, np.zeros(2), np.ones(1))[0], [0.0, 0.1])
    np.testing.assert_allclose(env_step(env, np.array([0.0, 0.1]), np.zeros(1))[0], [0.01, 0.1])


def test_zero_actions_stay_at_origin():
    env = make_env("PointMass2D", obs_noise_std=0.0)
    env.reset(0)
    for _ in range(100):
        obs, done = env.step(np.zeros(2))
    np.testing.assert_array_equal(obs, np.zeros(4))
    assert done


def test_actions_are_clipped():
    env = make_env("PointMass1D", obs_noise_std=0.0)
    a, _ = env_step(env, np.zeros(2), np.array([50.0]))
    b, _ = env_step(env, np.zeros(2), np.array([1.0]))
    np.testing.assert_array_equal(a, b)


def test_pendulum_acceleration():
    env = make_env("SpringPendulum", obs_noise_std=0.0)
    s = np.array([0.5, 0.2])
    nxt, _ = env_step(env, s, np.array([0.3]))
    accel = -np.sin(0.5) - 0.1 * 0.2 + 0.3
    np.testing.assert_allclose(nxt, [0.5 + 0.2 * 0.1, 0.2 + accel * 0.1])


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["PointMass1D", "PointMass2D", "SpringPendulum"]),
       st.lists(st.floats(-100, 100), min_size=4, max_size=4), st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2))
def test_state_stays_in_box(kind, state, action):
    env = make_env(kind)
    s = np.array(state[:env.state_dim])
    nxt, _ = env_step(env, np.clip(s, -env.state_box, env.state_box), np.array(action[:env.action_dim]))
    assert np.all(np.abs(nxt) <= env.state_box)


def test_step_rejects_bad_shapes():
    env = make_env("PointMass2D")
    with pytest.raises(ConfigError):
        env_step(env, np.zeros(3), np.zeros(2))


def test_episode_ends_at_horizon():
    env = make_env("PointMass1D", horizon=7)
    env.reset(0)
    dones = [env.step(np.zeros(1))[1] for _ in range(7)]
    assert dones == [False] * 6 + [True]
    assert env.interactions == 7


def test_goal_termination_option():
    env = make_env("PointMass1D", obs_noise_std=0.0, goal_terminates=True)
    env.reset(0)
    env.state = np.array([env.goal[0], 0.0])
    _, done = env.step(np.zeros(1))
    assert done and env.terminal


def test_expert_at_goal_is_zero():
    env = make_env("PointMass2D")
    np.testing.assert_allclose(expert_policy(env, np.concatenate([env.goal, np.zeros(2)])), 0.0)


def test_expert_pushes_toward_goal():
    env = make_env("PointMass1D")
    assert expert_policy(env, np.array([-0.5, 0.0]))[0] > 0


def test_expert_close_to_best_grid_gain():
    env = make_env("PointMass2D")
    gains = [0.5, 1.0, 2.0, 3.0, 4.0]
    scores = {}
    for kp in gains:
        for kd in gains:
            scores[(kp, kd)] = evaluate(env, lambda o, g=(kp, kd): expert_policy(env, o, g), 20, 1)
    best = max(scores, key=scores.get)
    best_ret = evaluate(env, lambda o: expert_policy(env, o, best), 100, 2)
    expert_ret = evaluate(env, lambda o: expert_policy(env, o), 100, 2)
    assert expert_ret >= 0.95 * best_ret


def test_rollout_return_counts_goal_fraction():
    env = make_env("PointMass1D", obs_noise_std=0.0, horizon=10, goal_distance=0.0)
    assert rollout_return(env, lambda o: np.zeros(1), 0) == 1.0


def test_tabular_geometric_series():
    mdp = TabularMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.9, np.ones(1))
    v, ret = tabular_policy_eval(mdp, np.ones((1, 1)))
    assert abs(ret - 10.0) < 1e-12


def test_tabular_zero_reward():
    rng = np.random.default_rng(0)
    mdp = random_mdp(rng, 4, 2)
    mdp.reward[:] = 0
    assert tabular_policy_eval(mdp, random_simplex(rng, (4, 2)))[1] == 0.0


def test_tabular_eval_matches_monte_carlo():
    rng = np.random.default_rng(42)
    mdp = random_mdp(rng, 5, 3, gamma=0.8)
    pi = random_simplex(rng, (5, 3))
    _, exact = tabular_policy_eval(mdp, pi)
    n, T = 12_500, 80  # 10^6 simulated steps; gamma^80 ~ 2e-8
    s = rng.choice(5, size=n, p=mdp.initial_distribution)
    ret = np.zeros(n)
    cum_pi = pi.cumsum(1)
    cum_p = mdp.transition.cumsum(2)
    for t in range(T):
        a = (rng.random(n)[:, None] > cum_pi[s]).sum(1)
        ret += mdp.gamma ** t * mdp.reward[s, a]
        s = (rng.random(n)[:, None] > cum_p[s, a]).sum(1)
        s = np.minimum(s, 4)
    se = ret.std(ddof=1) / np.sqrt(n)
    assert abs(ret.mean() - exact) < 3 * se + 1e-7


def test_tabular_rejects_bad_rows():
    with pytest.raises(ConfigError):
        TabularMdp(np.full((2, 1, 2), 0.6), np.zeros((2, 1)), 0.9, np.array([0.5, 0.5]))
    with pytest.raises(ConfigError):
        TabularMdp(np.full((1, 1, 1), 1.0), np.zeros((1, 1)), 1.0, np.ones(1))


def test_unknown_env_kind():
    with pytest.raises(ConfigError):
        make_env("Cartpole")
