"""Exact numerical checks of the occupancy-measure and return-gap results on tabular MDPs.

Every check returns :class:`CheckRow` records, ``lhs`` compared with ``rhs``.
For inequalities ``margin = rhs - lhs`` and the row is satisfied when
``margin >= -tol``. For identities ``margin = tol - |lhs - rhs|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envs import TabularMdp, check_policy, random_mdp, random_simplex, tabular_policy_eval
from .errors import ConfigError, NumericalError

IDENTITY_TOL = 1e-9
BOUND_TOL = 1e-12


@dataclass
class CheckRow:
    check: str
    trial: int
    lhs: float
    rhs: float
    margin: float
    satisfied: bool


def _bound_row(check: str, trial: int, lhs: float, rhs: float, tol: float = BOUND_TOL) -> CheckRow:
    margin = rhs - lhs
    return CheckRow(check, trial, lhs, rhs, margin, bool(margin >= -tol))


def _identity_row(check: str, trial: int, lhs: float, rhs: float, tol: float = IDENTITY_TOL) -> CheckRow:
    margin = tol - abs(lhs - rhs)
    return CheckRow(check, trial, lhs, rhs, margin, bool(margin >= 0))


# ---------------------------------------------------------------- occupancy and entropy

@dataclass
class OccupancyMeasure:
    rho: np.ndarray  # (S, A), unnormalised: sums to 1 / (1 - gamma)
    gamma: float

    @property
    def state_marginal(self) -> np.ndarray:
        return self.rho.sum(1)

    @property
    def mass(self) -> float:
        return float(self.rho.sum())


def state_visitation(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    """Discounted visitation ``d`` solving ``d = rho_0 + gamma P_pi^T d``."""
    policy = check_policy(policy, mdp.n_states, mdp.n_actions)
    system = np.eye(mdp.n_states) - mdp.gamma * mdp.policy_transition(policy).T
    try:
        return np.linalg.solve(system, mdp.initial_distribution)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"visitation system is singular: {exc}") from exc


def occupancy_measure(mdp: TabularMdp, policy: np.ndarray) -> OccupancyMeasure:
    d = state_visitation(mdp, policy)
    return OccupancyMeasure(np.asarray(policy, dtype=float) * d[:, None], mdp.gamma)


def policy_from_occupancy(rho, tol: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """``pi(a|s) = rho(s,a) / sum_a' rho(s,a')``.

    Returns ``(policy, reachable)``. States whose marginal is ``<= tol`` are
    flagged unreachable and get a uniform row.
    """
    r = rho.rho if isinstance(rho, OccupancyMeasure) else np.asarray(rho, dtype=float)
    if np.any(r < 0):
        raise ConfigError("occupancy entries must be non-negative")
    marg = r.sum(1)
    reachable = marg > tol
    pi = np.full_like(r, 1.0 / r.shape[1])
    pi[reachable] = r[reachable] / marg[reachable, None]
    return pi, reachable


def _xlogx_ratio(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    # p * log(p / q) with 0 log 0 := 0
    out = np.zeros_like(p, dtype=float)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos] / q[pos])
    return out


def entropy_policy(mdp: TabularMdp, policy: np.ndarray) -> float:
    """Discounted causal entropy ``E_pi[-log pi(a|s)]`` weighted by the exact occupancy."""
    policy = check_policy(policy, mdp.n_states, mdp.n_actions)
    rho = occupancy_measure(mdp, policy).rho
    logs = np.zeros_like(policy)
    pos = policy > 0
    logs[pos] = -np.log(policy[pos])
    return float((rho * logs).sum())


def entropy_occupancy(rho) -> float:
    """``-sum rho(s,a) log(rho(s,a) / sum_a' rho(s,a'))``."""
    r = rho.rho if isinstance(rho, OccupancyMeasure) else np.asarray(rho, dtype=float)
    marg = np.broadcast_to(r.sum(1, keepdims=True), r.shape)
    return float(-_xlogx_ratio(r, marg).sum())


def _check_prob(p, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ConfigError(f"{name} has negative entries")
    return p


def tvd(p, q) -> float:
    p, q = _check_prob(p, "p"), _check_prob(q, "q")
    return 0.5 * float(np.abs(p - q).sum())


def kl(p, q) -> float:
    """KL(p || q); ``inf`` where p has mass that q lacks."""
    p, q = _check_prob(p, "p"), _check_prob(q, "q")
    if np.any((p > 0) & (q == 0)):
        return math.inf
    return float(_xlogx_ratio(p, q).sum())


# ---------------------------------------------------------------- random instances

def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _trial_rng(seed: int, check: str, trial: int) -> np.random.Generator:
    # independent stream per (check, trial) so reports do not depend on evaluation order
    tag = sum(ord(c) * 31 ** i for i, c in enumerate(check)) % (2 ** 31)
    return np.random.default_rng([seed, tag, trial])


def _random_instance(rng: np.random.Generator, max_states: int = 6, max_actions: int = 4,
                     binary_reward: bool = False) -> tuple[TabularMdp, np.ndarray]:
    n_s = int(rng.integers(1, max_states + 1))
    n_a = int(rng.integers(2, max_actions + 1))
    mdp = random_mdp(rng, n_s, n_a, binary_reward=binary_reward)
    return mdp, random_simplex(rng, (n_s, n_a))


# ---------------------------------------------------------------- occupancy identities

def check_occupancy_roundtrip(n_trials: int, seed: int = 0) -> list[CheckRow]:
    """Recovering the policy from its occupancy gives the policy back, and its occupancy back."""
    rows = []
    for k in range(n_trials):
        mdp, pi = _random_instance(_trial_rng(seed, "roundtrip", k))
        occ = occupancy_measure(mdp, pi)
        rec, reach = policy_from_occupancy(occ)
        err_pi = float(np.abs(rec - pi)[reach].max()) if reach.any() else 0.0
        err_rho = float(np.abs(occupancy_measure(mdp, rec).rho - occ.rho).max())
        rows.append(_identity_row("occupancy_roundtrip", k, max(err_pi, err_rho), 0.0))
    return rows


def check_entropy_identity(n_trials: int, seed: int = 0) -> list[CheckRow]:
    """Causal entropy of a policy equals the occupancy entropy of its occupancy measure."""
    rows = []
    for k in range(n_trials):
        mdp, pi = _random_instance(_trial_rng(seed, "entropy", k))
        rows.append(_identity_row("entropy_identity", k, entropy_policy(mdp, pi),
                                  entropy_occupancy(occupancy_measure(mdp, pi))))
        # the reverse direction: an occupancy measure and the policy it induces
        rho = occupancy_measure(mdp, random_simplex(_trial_rng(seed, "entropy-rev", k),
                                                    (mdp.n_states, mdp.n_actions)))
        pi_rho, _ = policy_from_occupancy(rho)
        rows.append(_identity_row("entropy_identity_reverse", k, entropy_occupancy(rho),
                                  entropy_policy(mdp, pi_rho)))
    return rows


def check_occupancy_mass(n_trials: int, seed: int = 0) -> list[CheckRow]:
    rows = []
    for k in range(n_trials):
        mdp, pi = _random_instance(_trial_rng(seed, "roundtrip", k))
        rows.append(_identity_row("occupancy_mass", k, occupancy_measure(mdp, pi).mass,
                                  1.0 / (1.0 - mdp.gamma)))
    return rows


# ---------------------------------------------------------------- TVD bounds

def _conditionals(joint: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    marg = joint.sum(1)
    cond = np.full_like(joint, 1.0 / joint.shape[1])
    pos = marg > 0
    cond[pos] = joint[pos] / marg[pos, None]
    return marg, cond


def joint_tvd_sides(p1: np.ndarray, p2: np.ndarray) -> tuple[float, float]:
    """Both sides of the joint TVD bound for joint tables ``p(x, y)``."""
    m1, c1 = _conditionals(p1)
    m2, c2 = _conditionals(p2)
    lhs = tvd(p1.ravel(), p2.ravel())
    rhs = tvd(m1, m2) + float(m1 @ (0.5 * np.abs(c1 - c2).sum(1)))
    return lhs, rhs


def _random_joint(rng: np.random.Generator, nx: int, ny: int) -> np.ndarray:
    p = rng.gamma(1.0, size=(nx, ny))
    if rng.random() < 0.3:
        # sparse joints exercise zero marginals and zero conditionals
        p = p * (rng.random((nx, ny)) < 0.5)
        if p.sum() == 0:
            p[rng.integers(nx), rng.integers(ny)] = 1.0
    return p / p.sum()


def check_joint_tvd_bound(n_trials: int, max_dim: int = 8, seed: int = 0) -> list[CheckRow]:
    if max_dim < 2:
        raise ConfigError("joint distributions need dims >= 2")
    rows = []
    for k in range(n_trials):
        rng = _trial_rng(seed, "joint_tvd_bound", k)
        nx, ny = (int(v) for v in rng.integers(2, max_dim + 1, size=2))
        p1 = _random_joint(rng, nx, ny)
        p2 = _random_joint(rng, nx, ny) if rng.random() < 0.8 else _shared_marginal(rng, p1)
        rows.append(_bound_row("joint_tvd_bound", k, *joint_tvd_sides(p1, p2)))
    return rows


def _shared_marginal(rng: np.random.Generator, p1: np.ndarray) -> np.ndarray:
    marg = p1.sum(1)
    return marg[:, None] * random_simplex(rng, p1.shape)


def chain_tvd_profile(p0: np.ndarray, chain1, chain2, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Marginal TVDs ``eps_t`` and per-step ``delta_t`` for ``t = 1..horizon``.

    ``chain1``/``chain2`` are ``(S, S)`` row-stochastic matrices, or callables
    ``t -> matrix`` for time-varying chains (the matrix used to go from step
    ``t-1`` to ``t``). ``delta_t`` is the expected conditional TVD under the
    first chain's marginal at ``t - 1``.
    """
    get1 = chain1 if callable(chain1) else (lambda t: chain1)
    get2 = chain2 if callable(chain2) else (lambda t: chain2)
    m1 = np.asarray(p0, dtype=float)
    m2 = m1.copy()
    eps, delta = np.zeros(horizon), np.zeros(horizon)
    for t in range(1, horizon + 1):
        P1, P2 = get1(t), get2(t)
        delta[t - 1] = float(m1 @ (0.5 * np.abs(P1 - P2).sum(1)))
        m1, m2 = m1 @ P1, m2 @ P2
        eps[t - 1] = tvd(m1, m2)
    return eps, delta


def check_chain_tvd_bound(n_pairs: int, horizon: int = 20, max_states: int = 6, seed: int = 0,
                   time_varying: bool = True) -> list[CheckRow]:
    """Marginal TVD at step ``t`` against ``t * max_t delta_t``; one row per (pair, t)."""
    rows = []
    for k in range(n_pairs):
        rng = _trial_rng(seed, "chain_tvd_bound", k)
        n = int(rng.integers(2, max_states + 1))
        p0 = random_simplex(rng, n)
        if time_varying and k % 2 == 1:
            mats1 = random_simplex(rng, (horizon, n, n))
            mats2 = _perturbed_rows(rng, mats1, rng.uniform(0.0, 1.0))
            eps, delta = chain_tvd_profile(p0, lambda t: mats1[t - 1], lambda t: mats2[t - 1], horizon)
        else:
            P1 = random_simplex(rng, (n, n))
            P2 = _perturbed_rows(rng, P1, rng.uniform(0.0, 1.0))
            eps, delta = chain_tvd_profile(p0, P1, P2, horizon)
        d = float(delta.max())
        for t in range(1, horizon + 1):
            rows.append(_bound_row("chain_tvd_bound", k, float(eps[t - 1]), t * d))
    return rows


# ---------------------------------------------------------------- return-gap bound

def _perturbed_rows(rng: np.random.Generator, rows: np.ndarray, scale: float) -> np.ndarray:
    mixed = (1.0 - scale) * rows + scale * random_simplex(rng, rows.shape)
    return mixed / mixed.sum(-1, keepdims=True)


@dataclass
class BoundReport:
    measured_gap: float
    bound_value: float
    epsilon_m: float
    epsilon_pi: float
    pinsker_bound: float
    gamma: float
    satisfied: bool


def return_gap_bound(epsilon_m: float, epsilon_pi: float, gamma: float) -> float:
    if not 0.0 < gamma < 1.0:
        raise ConfigError(f"gamma must lie in (0, 1), got {gamma}")
    return 2.0 * (gamma * (epsilon_m + epsilon_pi) / (1.0 - gamma) ** 2 + epsilon_pi / (1.0 - gamma))


def model_divergence(model: TabularMdp, real_transition: np.ndarray, policy: np.ndarray,
                     max_steps: int = 5000, tol: float = 1e-15) -> float:
    """``max_t E_{s ~ p_m^t, a ~ pi}[KL(p_m(.|s,a) || p_r(.|s,a))]`` by exact marginal propagation.

    Marginals are propagated until they stop changing, after which every
    later step repeats the same value.
    """
    P_pi = model.policy_transition(policy)
    per_sa = np.array([[kl(model.transition[s, a], real_transition[s, a]) for a in range(model.n_actions)]
                       for s in range(model.n_states)])
    per_s = np.where(policy > 0, policy * per_sa, 0.0).sum(1)
    m = model.initial_distribution.copy()
    best = float(m @ per_s)
    for _ in range(max_steps):
        nxt = m @ P_pi
        best = max(best, float(nxt @ per_s))
        if np.abs(nxt - m).max() <= tol:
            break
        m = nxt
    return best


def return_gap_instance(rng: np.random.Generator, scale: float, max_states: int = 6,
                          max_actions: int = 4, bound_multiplier: float = 1.0) -> BoundReport:
    real, pi_e = _random_instance(rng, max_states, max_actions, binary_reward=True)
    model = TabularMdp(_perturbed_rows(rng, real.transition, scale), real.reward, real.gamma,
                       real.initial_distribution)
    pi_m = _perturbed_rows(rng, pi_e, scale)
    _, eta_e = tabular_policy_eval(real, pi_e)
    _, eta_m = tabular_policy_eval(model, pi_m)
    eps_m = model_divergence(model, real.transition, pi_m)
    eps_pi = max(tvd(pi_e[s], pi_m[s]) for s in range(real.n_states))
    bound = bound_multiplier * return_gap_bound(eps_m, eps_pi, real.gamma)
    pinsker = bound_multiplier * return_gap_bound(math.sqrt(eps_m / 2.0), eps_pi, real.gamma)
    gap = abs(eta_e - eta_m)
    return BoundReport(gap, bound, eps_m, eps_pi, pinsker, real.gamma, bool(gap <= bound + 1e-9))


def check_return_gap(n_mdps: int, perturbation_scale: float, seed: int = 0,
                       bound_multiplier: float = 1.0) -> list[BoundReport]:
    return [return_gap_instance(_trial_rng(seed, f"return_gap:{perturbation_scale!r}", k),
                                  perturbation_scale, bound_multiplier=bound_multiplier)
            for k in range(n_mdps)]


def return_gap_rows(reports: list[BoundReport], scale: float) -> list[CheckRow]:
    rows = []
    for k, rep in enumerate(reports):
        rows.append(CheckRow(f"return_gap[scale={scale:g}]", k, rep.measured_gap, rep.bound_value,
                             rep.bound_value - rep.measured_gap, rep.satisfied))
    return rows


# ---------------------------------------------------------------- Lagrangian identities

def _expected_reward(mdp: TabularMdp, policy: np.ndarray, reward: np.ndarray) -> float:
    # discounted expected reward via value evaluation rather than the occupancy table
    _, value = tabular_policy_eval(TabularMdp(mdp.transition, reward, mdp.gamma, mdp.initial_distribution),
                                   policy)
    return value


def _entropy_by_values(mdp: TabularMdp, policy: np.ndarray) -> float:
    logs = np.zeros_like(policy)
    pos = policy > 0
    logs[pos] = -np.log(policy[pos])
    return _expected_reward(mdp, policy, logs)


@dataclass
class LagrangianTrial:
    direct: float
    reduced: float
    residual: float = 0.0
    residual_bound: float = 0.0


def _expert_support(rng: np.random.Generator, rho_e: np.ndarray, n_samples: int = 50):
    """Sample state-action pairs from the expert occupancy; ``alpha`` are their sample frequencies."""
    flat = rho_e.ravel() / rho_e.sum()
    counts = np.bincount(rng.choice(flat.size, size=n_samples, p=flat), minlength=flat.size)
    alpha = (counts / n_samples).reshape(rho_e.shape)
    return alpha > 0, alpha


def lagrangian_trial(which: str, rng: np.random.Generator, matched: bool = False) -> LagrangianTrial:
    """Evaluate one constrained entropy Lagrangian in its occupancy form and its policy form.

    ``matching`` uses the constraint ``rho = rho_E``, ``nonnegative`` the
    constraint ``rho >= 0`` with non-negative duals, and ``support`` adds
    sampled expert-support duals ``alpha`` on ``pi_E - pi``.
    """
    mdp, pi = _random_instance(rng)
    pi_e = random_simplex(rng, (mdp.n_states, mdp.n_actions))
    r = rng.uniform(-1.0, 1.0, (mdp.n_states, mdp.n_actions))
    if which == "nonnegative":
        r = np.abs(r)  # dual variables of the non-negativity constraint
    rho = occupancy_measure(mdp, pi).rho
    rho_e = occupancy_measure(mdp, pi_e).rho
    pi_rho, _ = policy_from_occupancy(rho)
    reduced_core = -_entropy_by_values(mdp, pi_rho) - _expected_reward(mdp, pi_rho, r)
    if which == "matching":
        direct = -entropy_occupancy(rho) + float((r * (rho_e - rho)).sum())
        return LagrangianTrial(direct, reduced_core + _expected_reward(mdp, pi_e, r))
    if which == "nonnegative":
        return LagrangianTrial(-entropy_occupancy(rho) - float((r * rho).sum()), reduced_core)
    if which == "support":
        support, alpha = _expert_support(rng, rho_e)
        if matched:
            # learner agrees with the expert on every demonstrated pair
            pi = np.where(support.any(1, keepdims=True), pi_e, pi)
            rho = occupancy_measure(mdp, pi).rho
            pi_rho, _ = policy_from_occupancy(rho)
            reduced_core = -_entropy_by_values(mdp, pi_rho) - _expected_reward(mdp, pi_rho, r)
        gap = np.where(support, pi_e - pi_rho, 0.0)
        sup = float((alpha * gap).sum())
        direct = -entropy_occupancy(rho) - float((r * rho).sum()) + sup
        bound = float(alpha.sum()) * float(np.abs(gap).max())
        return LagrangianTrial(direct, reduced_core + sup, abs(sup), bound)
    raise ConfigError(f"unknown constraint selector {which!r}; choose matching, nonnegative or support")


def check_lagrangian(which: str, n_trials: int, seed: int = 0) -> list[CheckRow]:
    rows = []
    for k in range(n_trials):
        rng = _trial_rng(seed, f"lagrangian_{which}", k)
        tr = lagrangian_trial(which, rng)
        rows.append(_identity_row(f"lagrangian_{which}", k, tr.direct, tr.reduced))
        if which == "support":
            rows.append(_bound_row("lagrangian_support_residual", k, tr.residual, tr.residual_bound, IDENTITY_TOL))
    if which == "matching":
        for k in range(n_trials):
            rng = _trial_rng(seed, "lagrangian_matching_expert", k)
            mdp, pi_e = _random_instance(rng)
            rho_e = occupancy_measure(mdp, pi_e)
            rec, _ = policy_from_occupancy(rho_e)
            rows.append(_identity_row("lagrangian_matching_expert_recovery", k, float(np.abs(rec - pi_e).max()), 0.0))
    return rows


# ---------------------------------------------------------------- full report

@dataclass
class VerifyConfig:
    trials: int = 100
    joint_trials: int = 1000
    joint_max_dim: int = 8
    chain_horizon: int = 20
    chain_max_states: int = 6
    perturbation_scales: tuple[float, ...] = (0.01, 0.05, 0.1)
    bound_multiplier: float = 1.0
    seed: int = 0


def run_verification(cfg: VerifyConfig) -> tuple[list[CheckRow], dict]:
    """Run every check; returns the rows and per-check summaries."""
    n = cfg.trials
    rows: list[CheckRow] = []
    rows += check_occupancy_roundtrip(n, cfg.seed)
    rows += check_entropy_identity(n, cfg.seed)
    rows += check_occupancy_mass(n, cfg.seed)
    rows += check_joint_tvd_bound(cfg.joint_trials if n else 0, cfg.joint_max_dim, cfg.seed)
    rows += check_chain_tvd_bound(n, cfg.chain_horizon, cfg.chain_max_states, cfg.seed)
    pinsker = {}
    for scale in cfg.perturbation_scales:
        reps = check_return_gap(n, scale, cfg.seed, cfg.bound_multiplier)
        rows += return_gap_rows(reps, scale)
        pinsker[scale] = sum(r.measured_gap > r.pinsker_bound + 1e-9 for r in reps)
    for which in ("matching", "nonnegative", "support"):
        rows += check_lagrangian(which, n, cfg.seed)
    summary = {"checks": len(rows), "violations": sum(not r.satisfied for r in rows),
               "pinsker_violations": pinsker}
    return rows, summary


def report_csv(rows: list[CheckRow], summary: dict | None = None) -> str:
    lines = ["check,trial,lhs,rhs,margin,satisfied"]
    for r in sorted(rows, key=lambda r: (r.check, r.trial)):
        lines.append(f"{r.check},{r.trial},{r.lhs:.17g},{r.rhs:.17g},{r.margin:.17g},"
                     f"{'true' if r.satisfied else 'false'}")
    if summary is None:
        summary = {"checks": len(rows), "violations": sum(not r.satisfied for r in rows)}
    lines.append(f"# summary: checks={summary['checks']} violations={summary['violations']}")
    return "\n".join(lines) + "\n"
