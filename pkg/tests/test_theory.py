import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrfil.envs import TabularMdp, random_mdp, random_simplex, tabular_policy_eval
from mrfil.errors import ConfigError
from mrfil.theory import (VerifyConfig, chain_tvd_profile, check_chain_tvd_bound, check_joint_tvd_bound,
                          check_lagrangian, check_return_gap, entropy_occupancy, entropy_policy, joint_tvd_sides, kl,
                          lagrangian_trial, model_divergence, occupancy_measure, policy_from_occupancy, report_csv,
                          return_gap_bound, return_gap_instance, run_verification, tvd)


def _one_state(pi, gamma=0.5):
    return TabularMdp(np.ones((1, len(pi), 1)), np.zeros((1, len(pi))), gamma, np.ones(1))


# ---------------------------------------------------------------- occupancy

def test_single_state_occupancy():
    occ = occupancy_measure(_one_state([0.3, 0.7]), np.array([[0.3, 0.7]]))
    np.testing.assert_allclose(occ.rho, [[0.6, 1.4]], atol=1e-15)
    assert abs(occ.mass - 2.0) < 1e-15


def test_occupancy_matches_power_series():
    rng = np.random.default_rng(0)
    mdp = random_mdp(rng, 5, 3, gamma=0.7)
    pi = random_simplex(rng, (5, 3))
    p_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    d, m = np.zeros(5), mdp.initial_distribution.copy()
    for t in range(200):  # 0.7^200 is far below double precision
        d += mdp.gamma ** t * m
        m = m @ p_pi
    np.testing.assert_allclose(occupancy_measure(mdp, pi).rho, pi * d[:, None], atol=1e-12)


def test_occupancy_matches_monte_carlo():
    rng = np.random.default_rng(1)
    mdp = random_mdp(rng, 4, 2, gamma=0.6)
    pi = random_simplex(rng, (4, 2))
    n, T = 20_000, 60
    counts = np.zeros((4, 2))
    s = rng.choice(4, size=n, p=mdp.initial_distribution)
    for t in range(T):
        a = (rng.random(n)[:, None] > pi[s].cumsum(1)).sum(1).clip(max=1)
        np.add.at(counts, (s, a), mdp.gamma ** t)
        s = (rng.random(n)[:, None] > mdp.transition[s, a].cumsum(1)).sum(1).clip(max=3)
    est = counts / n
    exact = occupancy_measure(mdp, pi).rho
    # per-cell discounted counts are bounded by 1 / (1 - gamma) = 2.5
    assert np.abs(est - exact).max() < 4 * 2.5 / math.sqrt(n)


def test_policy_roundtrip_and_uniform():
    rng = np.random.default_rng(2)
    mdp = random_mdp(rng, 6, 4)
    pi = random_simplex(rng, (6, 4))
    rec, reach = policy_from_occupancy(occupancy_measure(mdp, pi))
    assert reach.all()
    np.testing.assert_allclose(rec, pi, atol=1e-9)
    rec, _ = policy_from_occupancy(np.array([[0.25, 0.25]]))
    np.testing.assert_array_equal(rec, [[0.5, 0.5]])


def test_unreachable_state_flagged():
    # state 1 is never entered from state 0
    mdp = TabularMdp(np.array([[[1.0, 0.0]], [[0.0, 1.0]]]), np.zeros((2, 1)), 0.9, np.array([1.0, 0.0]))
    occ = occupancy_measure(mdp, np.ones((2, 1)))
    _, reach = policy_from_occupancy(occ)
    assert reach.tolist() == [True, False]


def test_negative_occupancy_rejected():
    with pytest.raises(ConfigError):
        policy_from_occupancy(np.array([[0.5, -0.1]]))


def test_deterministic_policy_has_zero_entropy():
    rng = np.random.default_rng(3)
    mdp = random_mdp(rng, 4, 3)
    pi = np.eye(3)[rng.integers(3, size=4)]
    assert entropy_policy(mdp, pi) == 0.0
    assert entropy_occupancy(occupancy_measure(mdp, pi)) == 0.0


def test_uniform_single_state_entropy():
    mdp = _one_state([0.5, 0.5])
    assert abs(entropy_policy(mdp, np.array([[0.5, 0.5]])) - 2 * math.log(2)) < 1e-12


# ---------------------------------------------------------------- divergences

def test_tvd_and_kl_basics():
    p = np.array([0.2, 0.3, 0.5])
    assert tvd(p, p) == 0.0 and kl(p, p) == 0.0
    assert tvd([1, 0], [0, 1]) == 1.0
    assert kl([0.5, 0.5], [1.0, 0.0]) == math.inf
    assert kl([0.0, 1.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)
    with pytest.raises(ConfigError):
        tvd([-0.1, 1.1], [0.5, 0.5])


def test_pinsker_on_random_pairs():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        n = int(rng.integers(2, 8))
        p, q = random_simplex(rng, n), random_simplex(rng, n)
        assert tvd(p, q) <= math.sqrt(kl(p, q) / 2) + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10_000))
def test_tvd_is_a_bounded_symmetric_metric(n, seed):
    rng = np.random.default_rng(seed)
    p, q, r = (random_simplex(rng, n) for _ in range(3))
    assert 0.0 <= tvd(p, q) <= 1.0
    assert tvd(p, q) == pytest.approx(tvd(q, p), abs=1e-15)
    assert tvd(p, r) <= tvd(p, q) + tvd(q, r) + 1e-15
    assert kl(p, q) >= 0.0


# ---------------------------------------------------------------- joint and chain TVD

def test_joint_bound_identical_joints():
    p = random_simplex(np.random.default_rng(5), (3, 4)).reshape(3, 4) / 3
    assert joint_tvd_sides(p, p) == (0.0, 0.0)


def test_joint_bound_shared_marginal_is_tight():
    rng = np.random.default_rng(6)
    marg = random_simplex(rng, 5)
    p1 = marg[:, None] * random_simplex(rng, (5, 3))
    p2 = marg[:, None] * random_simplex(rng, (5, 3))
    lhs, rhs = joint_tvd_sides(p1, p2)
    expected = sum(marg[x] * tvd(p1[x] / marg[x], p2[x] / marg[x]) for x in range(5))
    assert abs(lhs - expected) < 1e-12 and abs(rhs - expected) < 1e-12


def test_joint_bound_random_trials():
    rows = check_joint_tvd_bound(1000, 8, seed=1)
    assert len(rows) == 1000 and all(r.satisfied for r in rows)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_joint_bound_property(seed):
    rows = check_joint_tvd_bound(3, 6, seed)
    assert all(r.lhs <= r.rhs + 1e-12 for r in rows)


def test_chain_identical_gives_zero():
    rng = np.random.default_rng(7)
    P = random_simplex(rng, (4, 4))
    eps, delta = chain_tvd_profile(random_simplex(rng, 4), P, P, 10)
    assert np.all(eps == 0) and np.all(delta == 0)


def test_chain_profile_matches_matrix_powers():
    rng = np.random.default_rng(8)
    P1, P2 = random_simplex(rng, (5, 5)), random_simplex(rng, (5, 5))
    p0 = random_simplex(rng, 5)
    eps, delta = chain_tvd_profile(p0, P1, P2, 6)
    for t in range(1, 7):
        m1 = p0 @ np.linalg.matrix_power(P1, t)
        m2 = p0 @ np.linalg.matrix_power(P2, t)
        assert abs(eps[t - 1] - 0.5 * np.abs(m1 - m2).sum()) < 1e-12
    assert eps[0] <= delta[0] + 1e-15


def test_chain_bound_random_pairs():
    rows = check_chain_tvd_bound(100, 20, 6, seed=2)
    assert len(rows) == 100 * 20 and all(r.satisfied for r in rows)


# ---------------------------------------------------------------- return-gap bound

def test_zero_perturbation_gives_zero_gap_and_bound():
    rep = return_gap_instance(np.random.default_rng(9), 0.0)
    assert rep.epsilon_m < 1e-15 and rep.epsilon_pi < 1e-15
    assert rep.measured_gap < 1e-12 and rep.satisfied


def test_policy_only_bound_formula():
    g, e = 0.9, 0.03
    assert return_gap_bound(0.0, e, g) == pytest.approx(2 * (g * e / (1 - g) ** 2 + e / (1 - g)), rel=1e-15)
    with pytest.raises(ConfigError):
        return_gap_bound(0.1, 0.1, 1.0)


def test_model_divergence_matches_long_horizon_scan():
    rng = np.random.default_rng(10)
    real = random_mdp(rng, 4, 2, gamma=0.9)
    model = TabularMdp(random_simplex(rng, (4, 2, 4)), real.reward, 0.9, real.initial_distribution)
    pi = random_simplex(rng, (4, 2))
    per_s = np.array([sum(pi[s, a] * kl(model.transition[s, a], real.transition[s, a]) for a in range(2))
                      for s in range(4)])
    p_pi = np.einsum("sa,sat->st", pi, model.transition)
    m, best = model.initial_distribution, 0.0
    for _ in range(2000):
        best = max(best, float(m @ per_s))
        m = m @ p_pi
    assert abs(model_divergence(model, real.transition, pi) - best) < 1e-12


@pytest.mark.parametrize("scale", [0.01, 0.05, 0.1])
def test_return_gap_bound_random_trials(scale):
    reps = check_return_gap(100, scale, seed=3)
    assert all(r.satisfied for r in reps)
    assert all(r.measured_gap <= r.bound_value for r in reps)


def test_shrunk_bound_is_caught():
    reps = check_return_gap(50, 0.1, seed=3, bound_multiplier=0.01)
    assert not all(r.satisfied for r in reps)


# ---------------------------------------------------------------- Lagrangian identities

def test_nonnegative_zero_reward_reduces_to_entropy():
    rng = np.random.default_rng(11)
    mdp = random_mdp(rng, 5, 3)
    pi = random_simplex(rng, (5, 3))
    rho = occupancy_measure(mdp, pi).rho
    direct = -entropy_occupancy(rho) - float((np.zeros_like(rho) * rho).sum())
    assert abs(direct + entropy_policy(mdp, pi)) < 1e-12


def test_matching_expert_occupancy_cancels_reward():
    rng = np.random.default_rng(12)
    mdp = random_mdp(rng, 5, 3)
    pi_e = random_simplex(rng, (5, 3))
    rho_e = occupancy_measure(mdp, pi_e).rho
    for _ in range(5):
        r = rng.normal(size=(5, 3))
        lagrangian = -entropy_occupancy(rho_e) + float((r * (rho_e - rho_e)).sum())
        assert lagrangian == -entropy_occupancy(rho_e)
        reward_mdp = TabularMdp(mdp.transition, r, mdp.gamma, mdp.initial_distribution)
        assert abs(tabular_policy_eval(reward_mdp, pi_e)[1] - float((r * rho_e).sum())) < 1e-12


def test_support_matched_policy_equals_nonnegative_form():
    for k in range(20):
        tr = lagrangian_trial("support", np.random.default_rng(k), matched=True)
        assert tr.residual < 1e-12  # occupancy round trip leaves only rounding
        assert abs(tr.direct - tr.reduced) < 1e-9


@pytest.mark.parametrize("which", ["matching", "nonnegative", "support"])
def test_lagrangian_checks_pass(which):
    rows = check_lagrangian(which, 100, seed=4)
    assert rows and all(r.satisfied for r in rows)


def test_unknown_constraint_rejected():
    with pytest.raises(ConfigError):
        lagrangian_trial("T4", np.random.default_rng(0))


# ---------------------------------------------------------------- report

def test_verification_report_format():
    rows, summary = run_verification(VerifyConfig(trials=2, joint_trials=3, perturbation_scales=(0.05,)))
    text = report_csv(rows, summary)
    lines = text.splitlines()
    assert lines[0] == "check,trial,lhs,rhs,margin,satisfied"
    assert lines[-1] == f"# summary: checks={len(rows)} violations=0"
    assert len(lines) == len(rows) + 2
    assert all(line.endswith(",true") for line in lines[1:-1])


def test_zero_trials_gives_empty_report():
    rows, summary = run_verification(VerifyConfig(trials=0))
    assert rows == [] and summary["violations"] == 0
    assert report_csv(rows, summary).splitlines() == ["check,trial,lhs,rhs,margin,satisfied",
                                                      "# summary: checks=0 violations=0"]


def test_verification_is_seed_deterministic():
    cfg = VerifyConfig(trials=3, joint_trials=5)
    assert report_csv(*run_verification(cfg)) == report_csv(*run_verification(cfg))
