"""Builders for the worked example models.

Each builder validates its parameters and returns a :class:`FiniteMDP`, an
:class:`OrderedModel` (a model whose states and actions sit on an integer
grid) or an object exposing both a model view and a :class:`Simulator` view.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .mdp import FiniteMDP, MDPValidationError
from .rl import Simulator


@dataclass(frozen=True)
class OrderedModel:
    """A finite MDP whose states and actions carry integer grid coordinates.

    ``state_coords[s]`` and ``action_coords[a]`` are integer vectors; the
    product order on them is the order used by the structural checks.
    """

    mdp: FiniteMDP
    state_coords: np.ndarray
    action_coords: np.ndarray
    info: dict | None = None

    def __post_init__(self):
        sc = np.asarray(self.state_coords, dtype=np.int64)
        ac = np.asarray(self.action_coords, dtype=np.int64)
        if sc.ndim == 1:
            sc = sc[:, None]
        if ac.ndim == 1:
            ac = ac[:, None]
        if sc.shape[0] != self.mdp.n_states or ac.shape[0] != self.mdp.n_actions:
            raise MDPValidationError("coordinate tables must have one row per state/action")
        if len({tuple(r) for r in sc}) != len(sc) or len({tuple(r) for r in ac}) != len(ac):
            raise MDPValidationError("coordinate map must be injective")
        object.__setattr__(self, "state_coords", sc)
        object.__setattr__(self, "action_coords", ac)

    def state_index(self, coords) -> int:
        hit = np.flatnonzero(np.all(self.state_coords == np.asarray(coords), axis=1))
        if hit.size == 0:
            raise KeyError(coords)
        return int(hit[0])


def _check_distribution(p, name):
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
        raise MDPValidationError(f"{name} must be a probability vector")
    return p


# -- house sale ----------------------------------------------------------------


def house_sale_kernel(n: int = 10) -> np.ndarray:
    """Offer chain: interior offers move to i-1, i, i+1 with 1/3 each; the
    extreme offers stay with 1/3 and move inward with 2/3."""
    P = np.zeros((n, n))
    for i in range(n):
        for j in (i - 1, i, i + 1):
            P[i, min(max(j, 0), n - 1)] += 1 / 3
    return P


def build_house_sale(n: int = 10, discount: float = 0.9, rewards=None, P=None) -> OrderedModel:
    """Sell-or-wait model.

    States ``0..n-1`` hold offer ``i + 1``; state ``n`` is the absorbing
    "sold" state.  Action 0 rejects (payoff 0, next offer drawn from ``P``),
    action 1 accepts (payoff ``rewards[i]``, move to "sold").  The sold state
    has only action 0.  Default payoffs are ``R(i) = i``.
    """
    rewards = np.arange(1, n + 1, dtype=float) if rewards is None else np.asarray(rewards, float)
    P = house_sale_kernel(n) if P is None else np.asarray(P, float)
    if P.shape != (n, n) or rewards.shape != (n,):
        raise MDPValidationError("house-sale P must be (n, n) and rewards (n,)")
    for i in range(n):
        _check_distribution(P[i], f"offer kernel row {i}")
    sold = n
    trans = []
    for i in range(n):
        trans += [(i, 0, j, P[i, j], 0.0) for j in range(n) if P[i, j] > 0]
        trans.append((i, 1, sold, 1.0, rewards[i]))
    trans.append((sold, 0, sold, 1.0, 0.0))
    feasible = [[0, 1]] * n + [[0]]
    mdp = FiniteMDP(n + 1, 2, feasible, trans, discount)
    # sold sits below every offer: it is worth 0 and allows only action 0
    coords = np.r_[np.arange(n), -1]
    return OrderedModel(mdp, coords, np.arange(2), {"sold_state": sold})


def house_sale_cutoff(policy, n: int = 10):
    """Smallest offer index accepted by ``policy`` when it is a cutoff rule, else None.

    Returns ``n`` when the policy never accepts.
    """
    acc = np.asarray(policy[:n]) == 1
    if not acc.any():
        return n
    k = int(np.argmax(acc))
    return k if acc[k:].all() else None


# -- inventory -----------------------------------------------------------------


def build_inventory(max_inventory: int = 7, w: float = 2.0, h: float = 1.0, c: float = 1.0,
                    discount: float = 0.95, demand=None) -> OrderedModel:
    """Single-item inventory with lost sales.

    Stock ``s`` is raised to ``a`` in ``{s..max_inventory}``, demand ``D`` is
    drawn, ``s' = max(a - D, 0)`` and the realized payoff is
    ``w (a - s') - c (a - s) - h s'`` (sales revenue, ordering cost, holding
    cost).  Its expectation is ``w E min(a, D) - c (a - s) - h E (a - D)^+``.
    ``demand[k]`` is ``P(D = k)`` on ``0..max_inventory``; default uniform on
    ``1..max_inventory``.
    """
    n = int(max_inventory)
    if n < 1:
        raise MDPValidationError("max_inventory must be >= 1")
    if demand is None:
        demand = np.r_[0.0, np.full(n, 1.0 / n)]
    demand = _check_distribution(demand, "demand")
    if demand.shape != (n + 1,):
        raise MDPValidationError(f"demand must have {n + 1} entries")
    trans = []
    for s in range(n + 1):
        for a in range(s, n + 1):
            probs = {}
            for d, pd in enumerate(demand):
                if pd > 0:
                    s2 = max(a - d, 0)
                    probs[s2] = probs.get(s2, 0.0) + pd
            for s2, p in sorted(probs.items()):
                trans.append((s, a, s2, p, w * (a - s2) - c * (a - s) - h * s2))
    feasible = [list(range(s, n + 1)) for s in range(n + 1)]
    mdp = FiniteMDP(n + 1, n + 1, feasible, trans, discount)
    params = dict(max_inventory=n, w=w, h=h, c=c, discount=discount, demand=demand.tolist())
    return OrderedModel(mdp, np.arange(n + 1), np.arange(n + 1), params)


# -- aggregation test chain -------------------------------------------------------


def build_ladder(n_states: int = 100, n_actions: int = 3, discount: float = 0.95) -> FiniteMDP:
    """Birth-death chain on states ``1..n`` (indices ``0..n-1``), actions ``1..m``.

    Payoff ``R(s, a) = s a``; the chain moves up to ``min(s+1, n)`` with
    probability ``1 / (0.1 s + a)`` and otherwise down to ``max(1, s-1)``.
    """
    trans = []
    for i in range(n_states):
        s = i + 1
        for j in range(n_actions):
            a = j + 1
            up = 1.0 / (0.1 * s + a)
            if not 0 <= up <= 1:
                raise MDPValidationError(f"up-probability {up} out of range at s={s}, a={a}")
            hi, lo = min(i + 1, n_states - 1), max(0, i - 1)
            if hi == lo:
                trans.append((i, j, hi, 1.0, float(s * a)))
            else:
                trans.append((i, j, hi, up, float(s * a)))
                trans.append((i, j, lo, 1.0 - up, float(s * a)))
    return FiniteMDP(n_states, n_actions, [range(n_actions)] * n_states, trans, discount)


# -- grid world -----------------------------------------------------------------

MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right
MOVE_LETTERS = "UDLR"


class GridWorld(Simulator):
    """Deterministic grid navigation.

    State ``row * size + col``.  Moving off the grid leaves the robot in
    place.  The payoff of a move is the reward of the cell entered: ``goal``
    at the target, ``obstacle`` on an obstacle cell, ``step`` elsewhere.
    Obstacles can be entered.  With ``terminal_goal=False`` (the default) the
    target is an ordinary state and episodes run for their full length.
    """

    def __init__(self, size=8, target=(3, 7), obstacles=((1, 2), (1, 3), (3, 1), (3, 2), (3, 6), (6, 6)),
                 goal=10.0, obstacle=-1.0, step=-0.1, discount=0.99, terminal_goal=False):
        self.size = int(size)
        self.target = tuple(target)
        self.obstacles = tuple(tuple(o) for o in obstacles)
        for cell in (self.target, *self.obstacles):
            if not all(0 <= x < self.size for x in cell):
                raise MDPValidationError(f"cell {cell} lies outside the {self.size}x{self.size} grid")
        if self.target in self.obstacles:
            raise MDPValidationError("target cannot be an obstacle")
        self.discount = float(discount)
        self.terminal_goal = bool(terminal_goal)
        self.reward_matrix = np.full((self.size, self.size), float(step))
        for o in self.obstacles:
            self.reward_matrix[o] = obstacle
        self.reward_matrix[self.target] = goal
        self.n_states = self.size * self.size
        self.n_actions = 4
        self.feasible = tuple((0, 1, 2, 3) for _ in range(self.n_states))
        self._table = [[self._move(s, a) for a in range(4)] for s in range(self.n_states)]

    def state(self, row, col) -> int:
        return row * self.size + col

    def position(self, state) -> tuple[int, int]:
        return divmod(int(state), self.size)

    def _move(self, s, a):
        r, c = self.position(s)
        nr, nc = r + MOVES[a][0], c + MOVES[a][1]
        if not (0 <= nr < self.size and 0 <= nc < self.size):
            nr, nc = r, c
        return self.state(nr, nc), float(self.reward_matrix[nr, nc])

    def step(self, state, action, rng=None):
        return self._table[state][action]

    def is_terminal(self, state):
        return self.terminal_goal and state == self.goal_state

    @property
    def goal_state(self) -> int:
        return self.state(*self.target)

    @property
    def obstacle_states(self) -> list[int]:
        return [self.state(*o) for o in self.obstacles]

    def to_mdp(self) -> FiniteMDP:
        trans = []
        for s in range(self.n_states):
            for a in range(4):
                if self.terminal_goal and s == self.goal_state:
                    trans.append((s, a, s, 1.0, 0.0))
                else:
                    s2, r = self._table[s][a]
                    trans.append((s, a, s2, 1.0, r))
        return FiniteMDP(self.n_states, 4, self.feasible, trans, self.discount)

    def policy_grid(self, policy) -> list[list[str]]:
        grid = []
        for i in range(self.size):
            row = []
            for j in range(self.size):
                if (i, j) == self.target:
                    row.append("G")
                elif (i, j) in self.obstacles:
                    row.append("X")
                else:
                    row.append(MOVE_LETTERS[int(policy[self.state(i, j)])])
            grid.append(row)
        return grid

    def format_policy(self, policy) -> str:
        lines = ["Optimal policy (G: Goal, X: Obstacle):"]
        lines += [" ".join(r) for r in self.policy_grid(policy)]
        return "\n".join(lines) + "\n"


def build_gridworld(**kwargs) -> GridWorld:
    return GridWorld(**kwargs)


# -- rideshare ------------------------------------------------------------------

RIDESHARE_ACTIONS = ("match_11", "match_12", "match_21", "match_22", "match_both", "no_match")
A11, A12, A21, A22, A3, A0 = range(6)


def rideshare_decode(s: int) -> tuple[int, int, int, int]:
    return (s >> 3) & 1, (s >> 2) & 1, (s >> 1) & 1, s & 1


def rideshare_encode(d1, d2, r1, r2) -> int:
    return (d1 << 3) | (d2 << 2) | (r1 << 1) | r2


def rideshare_actions(state) -> list[int]:
    d1, d2, r1, r2 = state
    acts = [A0]
    if d1 and r1:
        acts.append(A11)
    if d1 and r2:
        acts.append(A12)
    if d2 and r1:
        acts.append(A21)
    if d2 and r2:
        acts.append(A22)
    if d1 and d2 and r1 and r2:
        acts.append(A3)
    return sorted(acts)


class Rideshare(Simulator):
    """Two driver types, two request types; state ``(d1, d2, r1, r2)`` in bits.

    Index ``d1 << 3 | d2 << 2 | r1 << 1 | r2``.  Actions
    ``0..5 = a11, a12, a21, a22, a3, a0``.  A match clears the matched
    components; afterwards every absent component reappears independently
    with probabilities ``reappear = (p_1d, p_2d, p_1r, p_2r)``.
    """

    def __init__(self, rewards=(3.0, 2.0, 4.0, 3.0), x3=10.0,
                 reappear=(0.5, 0.6, 0.45, 0.7), discount=0.99):
        self.rewards = tuple(float(x) for x in rewards) + (float(x3), 0.0)
        self.reappear = tuple(float(p) for p in reappear)
        if len(self.reappear) != 4 or not all(0 <= p <= 1 for p in self.reappear):
            raise MDPValidationError("reappearance probabilities must be four numbers in [0, 1]")
        self.discount = float(discount)
        self.n_states = 16
        self.n_actions = 6
        self.feasible = tuple(tuple(rideshare_actions(rideshare_decode(s))) for s in range(16))

    @staticmethod
    def after_match(state, action):
        d1, d2, r1, r2 = state
        if action == A11:
            return (0, d2, 0, r2)
        if action == A12:
            return (0, d2, r1, 0)
        if action == A21:
            return (d1, 0, 0, r2)
        if action == A22:
            return (d1, 0, r1, 0)
        if action == A3:
            return (0, 0, 0, 0)
        return tuple(state)

    def step(self, state, action, rng):
        if action not in self.feasible[state]:
            raise MDPValidationError(f"action {action} infeasible in state {rideshare_decode(state)}")
        mid = self.after_match(rideshare_decode(state), action)
        nxt = [1 if (x == 0 and rng.random() < p) else x for x, p in zip(mid, self.reappear)]
        return rideshare_encode(*nxt), self.rewards[action]

    def to_mdp(self) -> FiniteMDP:
        trans = []
        for s in range(16):
            for a in self.feasible[s]:
                mid = self.after_match(rideshare_decode(s), a)
                probs = {}
                for bits in itertools.product((0, 1), repeat=4):
                    p = 1.0
                    for x, b, q in zip(mid, bits, self.reappear):
                        if x == 1:
                            p *= 1.0 if b == 1 else 0.0
                        else:
                            p *= q if b == 1 else 1 - q
                    if p > 0:
                        s2 = rideshare_encode(*bits)
                        probs[s2] = probs.get(s2, 0.0) + p
                for s2, p in sorted(probs.items()):
                    trans.append((s, a, s2, p, self.rewards[a]))
        return FiniteMDP(16, 6, self.feasible, trans, self.discount)


def build_rideshare(**kwargs) -> Rideshare:
    return Rideshare(**kwargs)


# -- Bayesian bandit --------------------------------------------------------------


def build_bandit_bayes(priors, budget: int, discount: float = 0.9):
    """Beta-Bernoulli bandit truncated after ``budget`` pulls.

    A state is the tuple of posterior parameters ``((alpha_1, beta_1), ...)``.
    Pulling arm ``i`` pays 1 with probability ``alpha_i / (alpha_i + beta_i)``
    and updates that arm to ``(alpha_i + x, beta_i + 1 - x)``.  Once
    ``budget`` pulls have been made the posterior is frozen: each arm then
    pays its posterior mean forever (a self-loop), so the tail value is
    ``max_i mean_i / (1 - discount)``.

    Returns ``(mdp, states)``; ``states[0]`` is the prior.
    """
    priors = [tuple(int(x) for x in p) for p in priors]
    if not priors or any(a <= 0 or b <= 0 for a, b in priors):
        raise MDPValidationError("priors must be positive integer pairs")
    if budget < 0:
        raise MDPValidationError("budget must be >= 0")
    k = len(priors)
    root = tuple(priors)
    index = {root: 0}
    states = [root]
    depth = {root: 0}
    frontier = [root]
    while frontier:
        nxt = []
        for st in frontier:
            if depth[st] == budget:
                continue
            for i in range(k):
                for x in (0, 1):
                    child = list(st)
                    a, b = st[i]
                    child[i] = (a + x, b + 1 - x)
                    child = tuple(child)
                    if child not in index:
                        index[child] = len(states)
                        states.append(child)
                        depth[child] = depth[st] + 1
                        nxt.append(child)
        frontier = nxt
    trans = []
    for st, s in index.items():
        for i in range(k):
            a, b = st[i]
            m = a / (a + b)
            if depth[st] == budget:
                trans.append((s, i, s, 1.0, m))
                continue
            for x, p in ((1, m), (0, 1 - m)):
                child = list(st)
                child[i] = (a + x, b + 1 - x)
                trans.append((s, i, index[tuple(child)], p, float(x)))
    mdp = FiniteMDP(len(states), k, [range(k)] * len(states), trans, discount)
    return mdp, states


# -- consumption-savings ---------------------------------------------------------


def sqrt_utility(c):
    return np.sqrt(np.maximum(c, 0.0))


def build_consumption_savings(wealth_grid=None, action_grid=None, incomes=(1.0, 1.5),
                              income_kernel=((0.7, 0.3), (0.3, 0.7)), returns=((1.0, 1.0),),
                              discount: float = 0.95, utility=sqrt_utility) -> OrderedModel:
    """Savings problem on a wealth grid with Markov income.

    State ``(wealth index, income index)`` with index
    ``w * n_income + y``.  Action ``k`` saves ``action_grid[k]``, feasible when
    it does not exceed wealth; consumption is ``wealth - saving`` and pays
    ``utility(consumption)``.  Next wealth is ``R * saving + y_current`` for
    each ``(R, prob)`` in ``returns``, snapped down to the largest grid point
    not above it (clipped to the grid); next income follows ``income_kernel``.

    The defaults (wealth step 0.25 on ``[0, 6]``, incomes on the same grid,
    gross return 1) make next wealth land on grid points, so no snapping
    occurs and the value function is concave in wealth.
    """
    wealth = np.linspace(0, 6, 25) if wealth_grid is None else np.asarray(wealth_grid, float)
    actions = wealth if action_grid is None else np.asarray(action_grid, float)
    incomes = np.asarray(incomes, float)
    Q = np.asarray(income_kernel, float)
    if np.any(np.diff(wealth) <= 0) or np.any(np.diff(actions) <= 0) or np.any(np.diff(incomes) <= 0):
        raise MDPValidationError("wealth, action and income grids must be strictly increasing")
    if Q.shape != (incomes.size, incomes.size):
        raise MDPValidationError("income kernel shape does not match incomes")
    for i in range(incomes.size):
        _check_distribution(Q[i], f"income kernel row {i}")
    _check_distribution([p for _, p in returns], "return distribution")
    if actions[0] > wealth[0]:
        raise MDPValidationError("smallest saving must be feasible at the lowest wealth")
    nw, ny = wealth.size, incomes.size
    trans, feasible = [], []
    eps = 1e-12 * max(1.0, wealth[-1])
    for w in range(nw):
        for y in range(ny):
            s = w * ny + y
            acts = [k for k in range(actions.size) if actions[k] <= wealth[w] + eps]
            feasible.append(acts)
            for k in acts:
                u = float(utility(max(wealth[w] - actions[k], 0.0)))
                probs = {}
                for R, pr in returns:
                    nxt_w = R * actions[k] + incomes[y]
                    iw = int(np.searchsorted(wealth, nxt_w + eps, side="right")) - 1
                    iw = min(max(iw, 0), nw - 1)
                    for y2 in range(ny):
                        if pr * Q[y, y2] > 0:
                            key = iw * ny + y2
                            probs[key] = probs.get(key, 0.0) + pr * Q[y, y2]
                for s2, p in sorted(probs.items()):
                    trans.append((s, k, s2, p, u))
    mdp = FiniteMDP(nw * ny, actions.size, feasible, trans, discount)
    coords = np.array([(w, y) for w in range(nw) for y in range(ny)])
    info = dict(wealth=wealth, actions=actions, incomes=incomes)
    return OrderedModel(mdp, coords, np.arange(actions.size), info)
