import numpy as np
import pytest
from hypothesis import given, strategies as st

from convexq.features import tabular_basis
from convexq.mdp_core import (
    BUNDLED_MDPS, DeterministicPolicy, FiniteMdp, MultichainError, RandomizedPolicy, bellman_operator,
    bundled_mdp, dumps_mdp, exact_gbar, greedy_policy, joint_invariant_pmf, joint_transition_matrix,
    loads_mdp, policy_evaluation, random_mdp, value_iteration,
)
from convexq.simulate import FiniteMdpEnv, rollout

from oracles import Q_STAR, enumerate_q_star


def test_rejects_bad_rows():
    P = np.array([[[0.5, 0.6], [0.5, 0.5]]])
    with pytest.raises(ValueError):
        FiniteMdp(P, np.ones((2, 1)), 0.9)


def test_rejects_negative_cost_and_bad_discount():
    P = np.full((1, 2, 2), 0.5)
    with pytest.raises(ValueError):
        FiniteMdp(P, -np.ones((2, 1)), 0.9)
    with pytest.raises(ValueError):
        FiniteMdp(P, np.ones((2, 1)), 1.0)


def test_zero_cost_gives_zero_q():
    mdp = random_mdp(4, 2, 0.9, np.random.default_rng(0), cost_scale=0.0)
    assert np.all(value_iteration(mdp) == 0.0)


def test_single_state_geometric_series():
    mdp = FiniteMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.5)
    assert value_iteration(mdp, tol=1e-13)[0, 0] == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("name", BUNDLED_MDPS)
def test_bundled_q_star_matches_frozen_enumeration(name):
    Q = value_iteration(bundled_mdp(name))
    assert np.abs(Q - np.array(Q_STAR[name])).max() <= 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_random_q_star_matches_policy_enumeration(seed):
    mdp = random_mdp(4, 2, 0.9, np.random.default_rng(seed))
    Q = value_iteration(mdp)
    assert np.abs(Q - enumerate_q_star(mdp.transitions, mdp.cost, mdp.discount)).max() <= 1e-8


@given(st.integers(0, 10_000), st.sampled_from([0.5, 0.9, 0.99]))
def test_value_iteration_residual_below_tol(seed, gamma):
    mdp = random_mdp(5, 2, gamma, np.random.default_rng(seed))
    Q = value_iteration(mdp, tol=1e-10)
    assert np.abs(bellman_operator(mdp, Q) - Q).max() <= 1e-10 * (1 + gamma / (1 - gamma)) + 1e-10


def test_greedy_tie_break_and_simple_choice():
    assert greedy_policy(np.ones((3, 2))).action.tolist() == [0, 0, 0]
    assert greedy_policy(np.array([[1.0, 0.0]])).action.tolist() == [1]


@pytest.mark.parametrize("seed", range(3))
def test_greedy_policy_cost_equals_min_q(seed):
    mdp = random_mdp(4, 2, 0.9, np.random.default_rng(seed))
    Q = value_iteration(mdp, tol=1e-12)
    pol = greedy_policy(Q)
    Qpol = policy_evaluation(mdp, pol)
    V = Qpol[np.arange(4), pol.action]
    assert np.abs(V - Q.min(axis=1)).max() <= 1e-9


def test_symmetric_chain_uniform_pmf():
    P = np.array([[[0.3, 0.7], [0.7, 0.3]], [[0.6, 0.4], [0.4, 0.6]]])
    mdp = FiniteMdp(P, np.ones((2, 2)), 0.9)
    pmf = joint_invariant_pmf(mdp, RandomizedPolicy.uniform(2, 2))
    assert np.allclose(pmf, 0.25, atol=1e-12)


def test_absorbing_state_concentrates_pmf():
    P = np.array([[[0.5, 0.5], [0.0, 1.0]], [[0.2, 0.8], [0.0, 1.0]]])
    mdp = FiniteMdp(P, np.ones((2, 2)), 0.9)
    pmf = joint_invariant_pmf(mdp, RandomizedPolicy.uniform(2, 2))
    assert pmf[0].sum() == pytest.approx(0.0, abs=1e-12)
    assert pmf[1].sum() == pytest.approx(1.0)


def test_multichain_detected():
    P = np.array([np.eye(2), np.eye(2)])
    with pytest.raises(MultichainError):
        joint_invariant_pmf(FiniteMdp(P, np.ones((2, 2)), 0.9), RandomizedPolicy.uniform(2, 2))


@given(st.integers(0, 10_000))
def test_invariant_pmf_is_fixed_point(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(5, 2, 0.9, rng)
    probs = rng.dirichlet(np.ones(2), size=5)
    pol = RandomizedPolicy(probs / probs.sum(axis=1, keepdims=True))
    pi = joint_invariant_pmf(mdp, pol).ravel()
    T = joint_transition_matrix(mdp, pol)
    assert np.abs(pi @ T - pi).max() <= 1e-10
    assert pi.sum() == pytest.approx(1.0)


@pytest.mark.slow
def test_invariant_pmf_matches_long_simulation():
    rng = np.random.default_rng(7)
    mdp = random_mdp(5, 2, 0.9, rng)
    eps = 0.3
    greedy = np.zeros((5, 2))
    greedy[:, 0] = 1.0
    pol = RandomizedPolicy((1 - eps) * greedy + eps * 0.5)
    traj = rollout(FiniteMdpEnv(mdp), pol, 10**6, seed=3)
    freq = np.bincount(traj.x * 2 + traj.u, minlength=10) / traj.N
    tv = 0.5 * np.abs(freq - joint_invariant_pmf(mdp, pol).ravel()).sum()
    assert tv <= 1e-2


@pytest.mark.parametrize("name", BUNDLED_MDPS)
def test_exact_gbar_vanishes_at_q_star(name):
    mdp = bundled_mdp(name)
    feats = tabular_basis(mdp)
    g = exact_gbar(mdp, RandomizedPolicy.uniform(mdp.n_states, 2), feats, value_iteration(mdp).ravel())
    assert np.abs(g).max() <= 1e-9


def test_exact_gbar_at_origin_is_minus_cost_moment():
    mdp = bundled_mdp("ring4")
    pol = RandomizedPolicy.uniform(4, 2)
    g = exact_gbar(mdp, pol, tabular_basis(mdp), np.zeros(8))
    expected = -(joint_invariant_pmf(mdp, pol) * mdp.cost).ravel()
    assert np.allclose(g, expected, atol=1e-12)
    assert np.all(g <= 0)


@pytest.mark.slow
def test_exact_gbar_matches_monte_carlo():
    rng = np.random.default_rng(11)
    mdp = random_mdp(4, 2, 0.9, rng)
    pol = RandomizedPolicy.uniform(4, 2)
    feats = tabular_basis(mdp)
    theta = rng.normal(size=8)
    traj = rollout(FiniteMdpEnv(mdp), pol, 10**6, seed=5)
    q_next = feats.next_psi(traj.x_next) @ theta
    td = -feats.psi(traj.x, traj.u) @ theta + traj.cost + mdp.discount * q_next.min(axis=1)
    terms = -td[:, None] * feats.zeta(traj.x, traj.u)
    batches = np.array([b.mean(axis=0) for b in np.array_split(terms, 100)])
    se = batches.std(axis=0, ddof=1) / 10
    gap = np.abs(terms.mean(axis=0) - exact_gbar(mdp, pol, feats, theta))
    assert np.all(gap <= 3 * se + 1e-12)


@given(st.integers(0, 10_000))
def test_feasible_points_lie_below_q_star(seed):
    """Comparison principle: exact_gbar(theta) <= 0 with full indicators implies Q^theta <= Q*."""
    rng = np.random.default_rng(seed)
    mdp = random_mdp(3, 2, 0.8, rng)
    pol = RandomizedPolicy.uniform(3, 2)
    Q = value_iteration(mdp)
    theta = (Q - rng.uniform(0, 2, Q.shape)).ravel()
    # pull theta into the feasible set by uniform scaling toward the origin
    feats = tabular_basis(mdp)
    for _ in range(60):
        if np.all(exact_gbar(mdp, pol, feats, theta) <= 1e-12):
            break
        theta = 0.9 * theta
    if np.all(exact_gbar(mdp, pol, feats, theta) <= 1e-12):
        assert np.all(theta.reshape(Q.shape) <= Q + 1e-9)


def test_serialization_round_trip():
    mdp = random_mdp(3, 2, 0.95, np.random.default_rng(2))
    back = loads_mdp(dumps_mdp(mdp))
    assert np.array_equal(back.transitions, mdp.transitions)
    assert np.array_equal(back.cost, mdp.cost)
    assert back.discount == mdp.discount


def test_malformed_mdp_text():
    with pytest.raises(ValueError):
        loads_mdp("2 2\n0.9\n1 2 3")


def test_deterministic_policy_roundtrip():
    pol = DeterministicPolicy(np.array([1, 0, 1]))
    assert pol.as_randomized(2).probs[:, 1].tolist() == [1.0, 0.0, 1.0]
