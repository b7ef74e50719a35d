import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynopt.mdp import FiniteMDP, value_iteration
from dynopt.models import OrderedModel, build_consumption_savings, build_house_sale, build_inventory
from dynopt.structure import (
    UTILITIES,
    argmax_correspondence,
    check_ascending,
    check_ascending_policy,
    check_concave_value,
    check_kernel_supermodular,
    check_kernel_upper_sets,
    check_monotone_hypotheses,
    check_monotone_value,
    check_supermodular,
    check_supermodular_hypotheses,
    check_supermodular_lattice,
    consumption_envelope_check,
    envelope_derivative_check,
    fsd_compare,
    random_concave_consumption,
    random_monotone_model,
    random_supermodular_model,
    upper_sets,
)


def solve(model, tol=1e-11):
    V, _ = value_iteration(model.mdp, tol=tol)
    return V


def with_discount(model, beta):
    m = model.mdp
    return OrderedModel(FiniteMDP(m.n_states, m.n_actions, m.feasible, m.triples(), beta),
                        model.state_coords, model.action_coords, model.info)


# -- stochastic dominance -------------------------------------------------------------


def test_fsd_examples():
    p = [0.2, 0.3, 0.5]
    assert fsd_compare(p, p) == "equal"
    assert fsd_compare([0, 0, 0, 1], [0, 1, 0, 0]) == "dominates"
    assert fsd_compare([0, 1, 0, 0], [0, 0, 0, 1]) == "dominated"
    assert fsd_compare([0.5, 0, 0.5], [0, 1, 0]) == "incomparable"
    with pytest.raises(ValueError):
        fsd_compare([0.5, 0.6], [1, 0])


dists = st.integers(0, 10_000).map(lambda s: np.random.default_rng(s).dirichlet(np.ones(4)))


@settings(max_examples=100, deadline=None)
@given(dists, dists, dists)
def test_fsd_order_properties(p, q, r):
    assert fsd_compare(p, p) == "equal"
    if fsd_compare(p, q) in ("dominates", "equal") and fsd_compare(q, r) in ("dominates", "equal"):
        assert fsd_compare(p, r) in ("dominates", "equal")
    # upper-set form: p dominates q iff p(B) >= q(B) for every suffix B
    ups = upper_sets(np.arange(4))
    by_sets = all(p[B].sum() >= q[B].sum() - 1e-12 for B in ups)
    assert by_sets == (fsd_compare(p, q) in ("dominates", "equal"))


def test_upper_sets_of_small_grids():
    assert len(upper_sets(np.arange(4))) == 4
    coords = np.array([(i, j) for i in range(2) for j in range(2)])
    # 2x2 grid: the nonempty upper sets are {11}, {01,11}, {10,11}, {01,10,11} and everything
    assert len(upper_sets(coords)) == 5
    coords = np.array([(i, j) for i in range(3) for j in range(3)])
    assert len(upper_sets(coords)) == 19  # C(6, 3) - 1 staircases


# -- checkers on hand-made inputs ----------------------------------------------------------


def test_monotone_value_and_hypotheses_on_house_sale():
    om = build_house_sale(10, 0.9)
    assert check_monotone_hypotheses(om).holds
    assert check_monotone_value(om, solve(om)).holds


def test_decreasing_reward_counterexample():
    P = np.full((3, 1, 3), 1 / 3)
    om = OrderedModel(FiniteMDP.from_arrays(P, np.array([[3.0], [2.0], [1.0]]), 0.9), np.arange(3), [0])
    hyp = check_monotone_hypotheses(om)
    assert not hyp.holds and hyp.witness == (0, 2, 0) and hyp.magnitude == pytest.approx(2.0)
    rep = check_monotone_value(om, solve(om))
    assert not rep.holds and rep.magnitude > 0.5
    const = OrderedModel(FiniteMDP.from_arrays(P, np.ones((3, 1)), 0.9), np.arange(3), [0])
    assert check_monotone_value(const, solve(const)).holds


def test_concavity_checker():
    s = np.arange(10.0)
    assert check_concave_value(2 * s + 1).holds
    assert check_concave_value(np.sqrt(s)).holds
    rep = check_concave_value(s ** 2)
    assert not rep.holds and rep.magnitude == pytest.approx(2.0)


def test_supermodular_checkers():
    x, y = np.meshgrid(np.arange(4.0), np.arange(5.0), indexing="ij")
    assert check_supermodular(x * y).holds
    rep = check_supermodular(-x * y)
    assert not rep.holds and rep.magnitude == pytest.approx(1.0)
    coords = np.c_[x.ravel(), y.ravel()].astype(int)
    assert check_supermodular_lattice((x * y).ravel(), coords).holds
    assert not check_supermodular_lattice((-x * y).ravel(), coords).holds
    # unit squares decide supermodularity on the grid
    rng = np.random.default_rng(0)
    grid = np.array([(i, j) for i in range(3) for j in range(3)])
    for _ in range(30):
        F = rng.normal(size=(3, 3)) + 2 * np.outer(np.arange(3), np.arange(3))
        assert check_supermodular(F).holds == check_supermodular_lattice(F.ravel(), grid).holds


def test_kernel_checks():
    coords = np.array([(i, j) for i in range(2) for j in range(2)])
    index = {tuple(c): k for k, c in enumerate(coords)}
    # staying put: supermodular in the exact sense, but fails the upper-set condition on a 2-d grid
    P = np.zeros((4, 1, 4))
    P[np.arange(4), 0, np.arange(4)] = 1.0
    stay = OrderedModel(FiniteMDP.from_arrays(P, np.zeros((4, 1)), 0.9), coords, [0])
    assert check_kernel_supermodular(stay).holds
    assert not check_kernel_upper_sets(stay).holds
    # jumping to (max(i, j), max(i, j)) breaks supermodularity of E f for f = indicator of (1, 1)
    P = np.zeros((4, 1, 4))
    for s, (i, j) in enumerate(coords):
        m = max(i, j)
        P[s, 0, index[(m, m)]] = 1.0
    bad = OrderedModel(FiniteMDP.from_arrays(P, np.zeros((4, 1)), 0.9), coords, [0])
    assert not check_kernel_supermodular(bad).holds
    assert not check_supermodular_hypotheses(bad).holds


def test_ascending_sets():
    assert check_ascending([{0}, {1}, {3}]).holds
    assert not check_ascending([{2}, {1}]).holds
    assert check_ascending([{1, 2}, {2, 3}]).holds
    assert not check_ascending([{1, 3}, {2}]).holds
    assert not check_ascending([{(0, 1)}, {(1, 0)}]).holds
    assert not check_ascending([set(), {1}]).holds


def test_ascending_policy_counterexample():
    # payoff -(a - (2 - s))^2 has decreasing differences: the best action falls as s rises
    S = A = 3
    r = np.array([[-(a - (2 - s)) ** 2 for a in range(A)] for s in range(S)], dtype=float)
    P = np.full((S, A, S), 1 / S)
    om = OrderedModel(FiniteMDP.from_arrays(P, r, 0.5), np.arange(S), np.arange(A))
    assert not check_ascending_policy(om, solve(om)).holds


# -- randomized hypothesis -> conclusion families -------------------------------------------


@pytest.mark.parametrize("seed", range(50))
def test_monotone_family(seed):
    om = random_monotone_model(seed)
    assert check_monotone_hypotheses(om).holds
    assert check_monotone_value(om, solve(om)).holds


@pytest.mark.parametrize("seed", range(50))
def test_supermodular_family(seed):
    om = random_supermodular_model(seed)
    assert check_supermodular_hypotheses(om).holds
    n1, n2 = om.info["shape"]
    V = solve(om)
    assert check_supermodular(V.reshape(n1, n2)).holds
    assert check_supermodular_lattice(V, om.state_coords).holds
    assert check_monotone_value(om, V).holds


@pytest.mark.parametrize("seed", range(50))
def test_concave_family(seed):
    om = random_concave_consumption(seed)
    ny = len(om.info["incomes"])
    V = solve(om).reshape(-1, ny)
    assert check_concave_value(V).holds
    # increasing in wealth; income transitions are random, so not necessarily in income
    assert np.diff(V, axis=0).min() >= -1e-8


def test_ascending_in_discount_factor():
    for seed in range(10):
        base = random_supermodular_model(seed)
        Gs = [argmax_correspondence(with_discount(base, b), solve(with_discount(base, b)))
              for b in (0.3, 0.5, 0.7, 0.9)]
        for s in range(base.mdp.n_states):
            assert check_ascending([G[s] for G in Gs]).holds, (seed, s)


# -- inventory ------------------------------------------------------------------------------


def test_inventory_base_stock():
    om = build_inventory()
    V = solve(om)
    G = argmax_correspondence(om, V)
    if any(len(g) > 1 for g in G):
        pytest.skip("argmax not unique; base-stock identity not checked")
    policy = [next(iter(g))[0] for g in G]
    s_star = policy[0]
    assert policy == [4, 4, 4, 4, 4, 5, 6, 7]
    assert all(policy[s] == s_star for s in range(s_star + 1))
    assert all(policy[s] == s for s in range(s_star, 8))
    c = om.info["c"]
    for s1 in range(s_star + 1):
        for s2 in range(s1, s_star + 1):
            assert V[s2] - V[s1] == pytest.approx(c * (s2 - s1), abs=1e-8)
    assert check_ascending_policy(om, V).holds
    # feasible sets grow with the state downward only, so the monotone hypotheses do not apply
    rep = check_monotone_hypotheses(om)
    assert not rep.holds and "nested" in rep.notes
    assert check_monotone_value(om, V).holds


def test_inventory_ascending_in_minus_holding_cost():
    hs = [3.0, 2.0, 1.0, 0.5]  # increasing -h
    Gs = [argmax_correspondence(om, solve(om)) for om in (build_inventory(h=h) for h in hs)]
    for s in range(8):
        assert check_ascending([G[s] for G in Gs]).holds


def test_house_sale_cutoff_monotone_in_discount():
    from dynopt.models import house_sale_cutoff
    from dynopt.mdp import greedy_policy
    cuts = []
    for beta in (0.5, 0.8, 0.9, 0.95, 0.99):
        om = build_house_sale(10, beta)
        cuts.append(house_sale_cutoff(greedy_policy(om.mdp, solve(om))))
    assert cuts == sorted(cuts)
    assert cuts[2] == 1 and cuts[-1] == 6


# -- consumption-savings ----------------------------------------------------------------------


def test_consumption_structure():
    om = build_consumption_savings()
    nw, ny = len(om.info["wealth"]), len(om.info["incomes"])
    V = solve(om)
    assert check_concave_value(V.reshape(nw, ny)).holds
    assert check_monotone_value(om, V).holds
    G = argmax_correspondence(om, V)
    for y in range(ny):
        savings = [G[w * ny + y] for w in range(nw)]
        assert all(len(g) == 1 for g in savings)
        assert check_ascending(savings).holds


def test_consumption_envelope():
    om = build_consumption_savings()
    V = solve(om)
    checked = 0
    for w in range(len(om.info["wealth"])):
        for y in range(2):
            ec = consumption_envelope_check(om, V, w, y, np.sqrt, lambda c: 0.5 / np.sqrt(c))
            assert ec.ok, (w, y, ec)
            checked += not ec.skipped
    assert checked >= 40
    assert consumption_envelope_check(om, V, 0, 0, np.sqrt, None).skipped


def test_envelope_additive_case():
    # r = s1 + g(s2, a): V moves one for one with s1
    s1 = np.linspace(0, 2, 21)
    V = s1 + 4.2
    ec = envelope_derivative_check(s1, V, 10, 1.0)
    assert ec.ok and ec.gap <= 1e-12
    assert envelope_derivative_check(s1, V, 0, 1.0).skipped
    assert envelope_derivative_check(s1, V, 20, 1.0).skipped
    assert not envelope_derivative_check(s1, 2 * s1, 5, 1.0).ok


def test_utility_catalogue_is_concave_increasing():
    c = np.linspace(0, 5, 51)
    for u in UTILITIES.values():
        assert np.all(np.diff(u(c)) > 0)
        assert np.all(np.diff(u(c), 2) <= 1e-12)
