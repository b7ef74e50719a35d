import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dynopt.avg_reward import (
    NotErgodicError,
    SoftmaxPolicy,
    actor_critic,
    average_reward,
    bellman_avg_residual,
    best_deterministic_rho,
    differential_values,
    directional_derivative,
    ergodicity_check,
    performance_difference,
    poisson_residual,
    policy_gradient_exact,
    policy_kernel,
    project_simplex,
    projected_policy_gradient,
    reinforce_gradient_estimate,
    simplex_project,
    simulate_policy,
    softmax_gradient_exact,
    stationary_distribution,
)
from dynopt.mdp import FiniteMDP, MDPValidationError, policy_evaluation
from dynopt.rl import MDPSimulator

import oracles

# two-state example; rho* = 1.75 at actions (1, 1)
P2 = np.array([[[0.8, 0.2], [0.3, 0.7]], [[0.6, 0.4], [0.1, 0.9]]])
R2 = np.array([[1.0, 0.0], [0.5, 2.0]])
THETA2 = np.array([0.3, -0.2, 0.0, 0.4])


def two_state():
    return FiniteMDP.from_arrays(P2, R2, 0.9)


def ergodic_mdp(seed, S=3, A=2, beta=0.9, restrict=True):
    P, R, feas = oracles.random_mdp_arrays(seed, S, A, restrict=restrict)
    return FiniteMDP.from_arrays(P, R, beta, feas)


def random_policy(rng, mdp):
    pi = rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states) * mdp.mask
    return pi / pi.sum(axis=1, keepdims=True)


@pytest.mark.parametrize("K, expected", [
    ([[0.5, 0.5], [0.5, 0.5]], True),
    ([[0, 1], [1, 0]], False),
    ([[1, 0], [0, 1]], False),
    ([[0, 1, 0], [0, 0, 1], [0.5, 0.5, 0]], True),
    ([[1.0]], True),
])
def test_ergodicity_cases(K, expected):
    K = np.array(K, dtype=float)
    assert ergodicity_check(K) is expected
    assert oracles.is_primitive_bruteforce(K) is expected


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_ergodicity_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    K = rng.random((n, n)) * (rng.random((n, n)) < 0.4)
    K[np.arange(n), rng.integers(n, size=n)] += 0.1
    K /= K.sum(axis=1, keepdims=True)
    assert ergodicity_check(K) == oracles.is_primitive_bruteforce(K)


def test_stationary_distribution():
    np.testing.assert_allclose(stationary_distribution([[1.0]]), [1.0])
    D = np.array([[0.2, 0.5, 0.3], [0.5, 0.2, 0.3], [0.3, 0.3, 0.4]])
    np.testing.assert_allclose(stationary_distribution(D), np.full(3, 1 / 3), atol=1e-12)
    rng = np.random.default_rng(3)
    K = rng.random((3, 3))
    K /= K.sum(axis=1, keepdims=True)
    lam = stationary_distribution(K)
    np.testing.assert_allclose(lam, oracles.stationary_by_power(K), atol=1e-8)
    np.testing.assert_allclose(lam, oracles.stationary_by_eig(K), atol=1e-10)
    assert np.max(np.abs(lam @ K - lam)) <= 1e-10
    with pytest.raises(NotErgodicError):
        stationary_distribution([[0, 1], [1, 0]])
    with pytest.raises(MDPValidationError):
        stationary_distribution([[0.5, 0.6], [1, 0]])


def test_average_reward_hand_example():
    m = two_state()
    # policy (0, 1): chain [[0.8, 0.2], [0.1, 0.9]], lambda = (1/3, 2/3)
    assert average_reward(m, [0, 1]) == pytest.approx(1 / 3 * 1.0 + 2 / 3 * 2.0, abs=1e-12)
    const = FiniteMDP.from_arrays(P2, np.full((2, 2), 3.5), 0.9)
    assert average_reward(const, np.full((2, 2), 0.5)) == pytest.approx(3.5)


def test_average_reward_monte_carlo():
    m = ergodic_mdp(4)
    pi = random_policy(np.random.default_rng(0), m)
    _, _, rewards = simulate_policy(MDPSimulator(m), pi, 1_000_000, np.random.default_rng(1))
    assert abs(np.mean(rewards) - average_reward(m, pi)) <= 0.01


def test_two_state_differential_values_by_hand():
    m = two_state()
    sol = differential_values(m, [0, 1])
    # h(0) = 0 and h(0) = r(0) - rho + 0.8 h(0) + 0.2 h(1)
    h1 = (sol.rho - 1.0) / 0.2
    np.testing.assert_allclose(sol.h, [0.0, h1], atol=1e-12)
    const = differential_values(FiniteMDP.from_arrays(P2, np.ones((2, 2)), 0.9), np.full((2, 2), 0.5))
    np.testing.assert_allclose(const.h, 0, atol=1e-12)
    np.testing.assert_allclose(const.advantage, 0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_avg_reward_identities(seed):
    rng = np.random.default_rng(seed)
    m = ergodic_mdp(rng, S=int(rng.integers(1, 5)), A=int(rng.integers(1, 4)))
    pi, pi2 = random_policy(rng, m), random_policy(rng, m)
    sol = differential_values(m, pi)
    assert poisson_residual(m, sol) <= 1e-10
    np.testing.assert_allclose((pi * sol.advantage).sum(axis=1), 0, atol=1e-10)
    assert np.all(np.where(m.mask, sol.advantage, -np.inf).max(axis=1) >= -1e-12)
    lhs, rhs = performance_difference(m, pi, pi2)
    assert abs(lhs - rhs) <= 1e-9
    assert performance_difference(m, pi, pi) == pytest.approx((0.0, 0.0), abs=1e-12)


def test_reference_state_shifts_h():
    m = ergodic_mdp(5)
    pi = random_policy(np.random.default_rng(0), m)
    a, b = differential_values(m, pi, 0), differential_values(m, pi, 2)
    np.testing.assert_allclose(a.h - b.h, a.h[2] - b.h[2], atol=1e-10)
    np.testing.assert_allclose(a.advantage, b.advantage, atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_directional_derivative_matches_finite_difference(seed):
    rng = np.random.default_rng(seed)
    m = ergodic_mdp(rng, S=int(rng.integers(2, 4)), A=int(rng.integers(2, 4)))
    pi = 0.5 * random_policy(rng, m) + 0.5 * m.mask / m.mask.sum(axis=1, keepdims=True)
    d = rng.normal(size=pi.shape) * m.mask
    d -= m.mask * (d.sum(axis=1, keepdims=True) / m.mask.sum(axis=1, keepdims=True))
    d[~m.mask] = 0.0
    h = 1e-5
    fd = (average_reward(m, pi + h * d) - average_reward(m, pi - h * d)) / (2 * h)
    assert directional_derivative(m, pi, d) == pytest.approx(fd, abs=1e-6)


def test_directional_derivative_validation_and_constant_rewards():
    m = FiniteMDP.from_arrays(P2, np.ones((2, 2)), 0.9)
    d = np.array([[0.3, -0.3], [-1.0, 1.0]])
    assert directional_derivative(m, np.full((2, 2), 0.5), d) == pytest.approx(0, abs=1e-12)
    with pytest.raises(MDPValidationError):
        directional_derivative(m, np.full((2, 2), 0.5), [[1.0, 0.0], [0.0, 0.0]])


def test_first_order_optimality_at_optimum():
    m = two_state()
    best, arg = best_deterministic_rho(m)
    assert best == pytest.approx(1.75, abs=1e-12) and list(arg) == [1, 1]
    pi = np.eye(2)[arg]
    g = policy_gradient_exact(m, pi)
    for acts in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        assert np.sum(g * (np.eye(2)[list(acts)] - pi)) <= 1e-8


def test_simplex_projection_examples():
    np.testing.assert_allclose(project_simplex([2.0, 0.0]), [1.0, 0.0])
    np.testing.assert_allclose(project_simplex([0.6, 0.6]), [0.5, 0.5])
    np.testing.assert_allclose(project_simplex([0.6, 0.6]), oracles.project_simplex_qp([0.6, 0.6]), atol=1e-3)
    np.testing.assert_allclose(project_simplex([0.2, 0.3, 0.5]), [0.2, 0.3, 0.5])
    out = simplex_project([[0.9, 5.0, 0.9]], np.array([[True, False, True]]))
    np.testing.assert_allclose(out, [[0.5, 0.0, 0.5]])


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.integers(1, 6), elements=st.floats(-10, 10)))
def test_simplex_projection_properties(v):
    p = project_simplex(v)
    assert p.min() >= 0 and p.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(project_simplex(p), p, atol=1e-12)
    # optimality: no simplex vertex is closer in the sense of the variational inequality
    for e in np.eye(v.size):
        assert (v - p) @ (e - p) <= 1e-9
    if v.size == 2:
        np.testing.assert_allclose(p, oracles.project_simplex_qp(v), atol=1e-3)


def test_projected_pg_reaches_optimum():
    for seed in range(3):
        m = ergodic_mdp(seed, S=2, A=2, restrict=False)
        best, _ = best_deterministic_rho(m)
        res = projected_policy_gradient(m, np.full((2, 2), 0.5), alpha=0.01, iters=50_000)
        assert res.rho[-1] >= best - 1e-4
        assert np.all(np.diff(res.rho) >= -1e-9)


def test_projected_pg_fixed_points():
    m = two_state()
    opt = np.array([[0.0, 1.0], [0.0, 1.0]])
    res = projected_policy_gradient(m, opt, alpha=0.01, iters=10)
    np.testing.assert_array_equal(res.policy, opt)
    assert res.converged
    start = np.array([[0.3, 0.7], [0.6, 0.4]])
    frozen = projected_policy_gradient(m, start, alpha=0.0, iters=10)
    np.testing.assert_array_equal(frozen.policy, start)


def test_projected_pg_reports_non_ergodic_iterate():
    # action 1 freezes the current state; the optimum (stay in state 1) is reducible
    P = np.zeros((2, 2, 2))
    P[:, 0] = 0.5
    P[0, 1, 0] = P[1, 1, 1] = 1.0
    m = FiniteMDP.from_arrays(P, np.array([[0.0, 0.0], [0.0, 1.0]]), 0.9)
    with pytest.raises(NotErgodicError, match="iterate"):
        projected_policy_gradient(m, np.full((2, 2), 0.5), alpha=1.0, iters=1000)


def test_average_reward_bellman_at_optimum():
    m = two_state()
    res = projected_policy_gradient(m, np.full((2, 2), 0.5), alpha=0.05, iters=20_000)
    sol = differential_values(m, res.policy)
    assert bellman_avg_residual(m, sol.rho, sol.h) <= 1e-6


def test_discounted_bridge():
    m = ergodic_mdp(6, beta=0.999)
    pi = random_policy(np.random.default_rng(0), m)
    V = policy_evaluation(m, pi)
    sol = differential_values(m, pi)
    assert abs((1 - 0.999) * V[0] - sol.rho) <= 1e-2
    np.testing.assert_allclose(V - V[0], sol.h, atol=1e-2)


def test_softmax_gradient_matches_finite_difference():
    m = two_state()
    pol = SoftmaxPolicy.tabular(m.mask)
    g = softmax_gradient_exact(m, pol, THETA2)
    h = 1e-6
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        fd = (average_reward(m, pol.probs(THETA2 + e)) - average_reward(m, pol.probs(THETA2 - e))) / (2 * h)
        assert g[k] == pytest.approx(fd, abs=1e-7)


def test_reinforce_average_matches_exact_gradient():
    m = two_state()
    pol = SoftmaxPolicy.tabular(m.mask)
    sim = MDPSimulator(m)
    exact = softmax_gradient_exact(m, pol, THETA2)
    est = np.mean([reinforce_gradient_estimate(sim, pol, THETA2, 500, np.random.default_rng([1, i]))
                   for i in range(2000)], axis=0)
    assert np.max(np.abs(est - exact)) / np.max(np.abs(exact)) <= 0.05


def test_reinforce_degenerate_cases():
    single = FiniteMDP.from_arrays(P2[:, :1], R2[:, :1], 0.9)
    pol = SoftmaxPolicy.tabular(single.mask)
    est = reinforce_gradient_estimate(MDPSimulator(single), pol, np.zeros(2), 50, rng=0)
    np.testing.assert_array_equal(est, 0.0)
    const = FiniteMDP.from_arrays(P2, np.full((2, 2), 2.0), 0.9)
    pol = SoftmaxPolicy.tabular(const.mask)
    sim = MDPSimulator(const)
    est = np.mean([reinforce_gradient_estimate(sim, pol, THETA2, 200, rng=i) for i in range(200)], axis=0)
    assert np.max(np.abs(est)) <= 0.01
    with pytest.raises(ValueError):
        reinforce_gradient_estimate(sim, pol, THETA2, 10, rng=0, rho_bar="other")


def test_actor_critic_reaches_optimum():
    m = two_state()
    pol = SoftmaxPolicy.tabular(m.mask)
    res = actor_critic(MDPSimulator(m), pol, pol.features, np.zeros(4), np.zeros(4),
                       0.01, 0.01, 0.001, 200_000, rng=3)
    assert abs(res.rho[-1] - 1.75) <= 0.05


def test_actor_critic_zero_schedules_and_single_action():
    m = two_state()
    pol = SoftmaxPolicy.tabular(m.mask)
    res = actor_critic(MDPSimulator(m), pol, pol.features, THETA2, np.ones(4), 0.0, 0.0, 0.0, 500, rng=0)
    np.testing.assert_array_equal(res.theta, THETA2)
    np.testing.assert_array_equal(res.w, 1.0)
    np.testing.assert_array_equal(res.rho, 0.0)
    single = FiniteMDP.from_arrays(P2[:, :1], R2[:, :1], 0.9)
    pol = SoftmaxPolicy.tabular(single.mask)
    res = actor_critic(MDPSimulator(single), pol, pol.features, np.zeros(2), np.zeros(2),
                       0.01, 0.01, 0.001, 100_000, rng=1)
    np.testing.assert_array_equal(res.theta, 0.0)
    assert abs(res.rho[-1] - average_reward(single, [0, 0])) <= 0.01


def test_policy_kernel_rows():
    m = ergodic_mdp(7)
    K = policy_kernel(m, random_policy(np.random.default_rng(1), m))
    np.testing.assert_allclose(K.sum(axis=1), 1.0)
