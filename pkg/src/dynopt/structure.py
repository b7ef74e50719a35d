"""Exhaustive checkers for order-theoretic properties of models, value
functions and optimal-action correspondences on integer grids.

Each checker returns a :class:`StructureReport`; ``magnitude`` is the size
of the worst violation found (0 when the property holds exactly).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .mdp import FiniteMDP, argmax_sets
from .models import OrderedModel

TOL = 1e-8


@dataclass
class StructureReport:
    property: str
    holds: bool
    magnitude: float = 0.0
    witness: tuple | None = None
    skipped: bool = False
    notes: str = ""

    def as_dict(self) -> dict:
        return {
            "property": self.property,
            "holds": self.holds,
            "magnitude": self.magnitude,
            "witness": None if self.witness is None else [_plain(w) for w in self.witness],
            "skipped": self.skipped,
            "notes": self.notes,
        }

    def __str__(self):
        if self.skipped:
            return f"{self.property}: skipped ({self.notes})"
        verdict = "holds" if self.holds else f"VIOLATED by {self.magnitude:.3g} at {self.witness}"
        return f"{self.property}: {verdict}" + (f" ({self.notes})" if self.notes else "")


def _plain(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, tuple):
        return [_plain(v) for v in x]
    return x


def _report(name, worst, witness, tol, notes=""):
    worst = max(0.0, float(worst))
    return StructureReport(name, worst <= tol, worst, witness, notes=notes)


# -- stochastic dominance ---------------------------------------------------------


def fsd_compare(p1, p2, tol: float = 1e-12) -> str:
    """Compare two distributions on the same ordered 1-d grid by their CDFs.

    Returns ``"equal"``, ``"dominates"`` (``p1`` first-order dominates
    ``p2``: ``F1 <= F2`` everywhere), ``"dominated"`` or ``"incomparable"``.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if p1.shape != p2.shape or p1.ndim != 1:
        raise ValueError("distributions must live on the same 1-d grid")
    for p in (p1, p2):
        if np.any(p < -tol) or abs(p.sum() - 1) > 1e-9:
            raise ValueError("not a probability vector")
    d = np.cumsum(p1) - np.cumsum(p2)
    le = np.all(d <= tol)
    ge = np.all(d >= -tol)
    if le and ge:
        return "equal"
    if le:
        return "dominates"
    if ge:
        return "dominated"
    return "incomparable"


def upper_sets(coords) -> list[np.ndarray]:
    """All nonempty upper sets of a grid, as boolean masks over the points.

    1-d grids give the suffixes.  2-d grids are enumerated through their
    staircase boundaries (fine for small grids).  Higher dimensions are not
    supported.
    """
    coords = np.asarray(coords)
    if coords.ndim == 1:
        coords = coords[:, None]
    d = coords.shape[1]
    if d == 1:
        vals = np.unique(coords[:, 0])
        return [coords[:, 0] >= v for v in vals]
    if d == 2:
        xs = np.unique(coords[:, 0])
        ys = np.unique(coords[:, 1])
        out = []
        # threshold t[i] on y for column xs[i], non-increasing in i; len(ys) means empty column
        for t in itertools.combinations_with_replacement(range(len(ys) + 1)[::-1], len(xs)):
            mask = np.zeros(len(coords), dtype=bool)
            for i, x in enumerate(xs):
                if t[i] < len(ys):
                    mask |= (coords[:, 0] == x) & (coords[:, 1] >= ys[t[i]])
            if mask.any():
                out.append(mask)
        return out
    raise NotImplementedError("upper sets are enumerated for 1-d and 2-d grids only")


def _leq(u, v):
    return bool(np.all(u <= v))


def comparable_pairs(coords):
    """Index pairs ``(i, j)``, ``i != j``, with ``coords[i] <= coords[j]``."""
    coords = np.asarray(coords)
    if coords.ndim == 1:
        coords = coords[:, None]
    le = np.all(coords[:, None, :] <= coords[None, :, :], axis=2)
    np.fill_diagonal(le, False)
    return np.argwhere(le)


# -- value-function properties ---------------------------------------------------------


def check_monotone_value(model: OrderedModel, V, tol: float = TOL) -> StructureReport:
    """``V(s1) <= V(s2) + tol`` for every pair ``s1 <= s2`` in the grid order."""
    V = np.asarray(V, dtype=float)
    pairs = comparable_pairs(model.state_coords)
    if len(pairs) == 0:
        return StructureReport("monotone value", True)
    gap = V[pairs[:, 0]] - V[pairs[:, 1]]
    k = int(np.argmax(gap))
    return _report("monotone value", gap[k], (int(pairs[k, 0]), int(pairs[k, 1])), tol)


def check_monotone_hypotheses(model: OrderedModel, tol: float = TOL) -> StructureReport:
    """Sufficient conditions for an increasing value function.

    For ``s1 <= s2``: ``Gamma(s1)`` is contained in ``Gamma(s2)``, and for
    every ``a`` in ``Gamma(s1)``: ``r(s1, a) <= r(s2, a)`` and
    ``p(s1, a, B) <= p(s2, a, B)`` for every upper set ``B``.
    """
    mdp = model.mdp
    ups = np.array(upper_sets(model.state_coords), dtype=float)  # (n_sets, S)
    upper_mass = np.einsum("sak,bk->sab", mdp.P, ups)
    worst, wit = 0.0, None
    for i, j in comparable_pairs(model.state_coords):
        missing = mdp.mask[i] & ~mdp.mask[j]
        if missing.any():
            return StructureReport("monotone hypotheses", False, np.inf, (int(i), int(j)),
                                   notes="feasible sets not nested")
        for a in mdp.feasible[i]:
            v = max(mdp.r[i, a] - mdp.r[j, a], float(np.max(upper_mass[i, a] - upper_mass[j, a])))
            if v > worst:
                worst, wit = v, (int(i), int(j), int(a))
    return _report("monotone hypotheses", worst, wit, tol)


def check_concave_value(values, tol: float = TOL) -> StructureReport:
    """Discrete concavity on a uniform 1-d grid: successive differences do not increase.

    A 2-d array is checked column by column along its first axis.
    """
    V = np.asarray(values, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] < 3:
        return StructureReport("concave value", True)
    second = np.diff(V, n=2, axis=0)
    k = np.unravel_index(int(np.argmax(second)), second.shape)
    return _report("concave value", second[k], (int(k[0]) + 1, int(k[1])), tol)


def check_supermodular(F, tol: float = TOL) -> StructureReport:
    """Increasing differences on every axis-aligned unit square of a 2-d table."""
    F = np.asarray(F, dtype=float)
    if F.ndim != 2:
        raise ValueError("supermodularity check expects a 2-d table")
    if min(F.shape) < 2:
        return StructureReport("supermodular", True)
    cross = F[1:, 1:] + F[:-1, :-1] - F[1:, :-1] - F[:-1, 1:]
    k = np.unravel_index(int(np.argmin(cross)), cross.shape)
    return _report("supermodular", -cross[k], (int(k[0]), int(k[1])), tol)


def check_supermodular_lattice(f, coords, tol: float = TOL) -> StructureReport:
    """``f(x) + f(y) <= f(x v y) + f(x ^ y)`` for all pairs of grid points (exhaustive)."""
    coords = np.asarray(coords)
    if coords.ndim == 1:
        coords = coords[:, None]
    index = {tuple(c): i for i, c in enumerate(coords)}
    f = np.asarray(f, dtype=float)
    worst, wit = 0.0, None
    for i, j in itertools.combinations(range(len(coords)), 2):
        hi = index.get(tuple(np.maximum(coords[i], coords[j])))
        lo = index.get(tuple(np.minimum(coords[i], coords[j])))
        if hi is None or lo is None:
            raise ValueError("grid is not a lattice")
        v = f[i] + f[j] - f[hi] - f[lo]
        if v > worst:
            worst, wit = v, (i, j)
    return _report("supermodular", worst, wit, tol)


def _square_matrix(coords) -> np.ndarray:
    """Rows are the unit-square cross differences ``f(z+e_k+e_l) + f(z) - f(z+e_k) - f(z+e_l)``
    of a function on a product grid, one row per square and coordinate pair."""
    coords = np.asarray(coords)
    if coords.ndim == 1:
        coords = coords[:, None]
    axes = [np.unique(coords[:, k]) for k in range(coords.shape[1])]
    pos = [{v: i for i, v in enumerate(ax)} for ax in axes]
    index = {tuple(pos[k][c[k]] for k in range(len(axes))): i for i, c in enumerate(coords)}
    if len(index) != int(np.prod([len(a) for a in axes])):
        raise ValueError("points do not form a full product grid")
    rows = []
    for z in index:
        for k, l in itertools.combinations(range(len(axes)), 2):
            zk = list(z); zk[k] += 1
            zl = list(z); zl[l] += 1
            zkl = list(zk); zkl[l] += 1
            if tuple(zkl) not in index:
                continue
            row = np.zeros(len(coords))
            row[index[tuple(zkl)]] += 1
            row[index[z]] += 1
            row[index[tuple(zk)]] -= 1
            row[index[tuple(zl)]] -= 1
            rows.append(row)
    return np.array(rows).reshape(-1, len(coords))


def check_kernel_supermodular(model: OrderedModel) -> StructureReport:
    """Exact test that ``(s, a) -> sum_s' f(s') p(s, a, s')`` is supermodular for
    every supermodular ``f`` on the state grid.

    On a product grid the supermodular functions are the cone ``{f: M f >= 0}``
    of nonnegative unit-square cross differences.  For each unit square of the
    ``(s, a)`` grid the signed combination ``D`` of kernel rows must lie in the
    dual cone, ``D = M^T y`` with ``y >= 0``; feasibility is decided by the
    simplex phase one.  Requires every action feasible everywhere.
    """
    from .exact import LPInfeasible, simplex_standard

    mdp = model.mdp
    if not mdp.mask.all():
        return StructureReport("kernel supermodular", False, np.inf, ("restricted feasibility",))
    S, A = mdp.n_states, mdp.n_actions
    sa_coords = np.array([np.r_[np.atleast_1d(model.state_coords[s]), np.atleast_1d(model.action_coords[a])]
                          for s in range(S) for a in range(A)])
    M = _square_matrix(model.state_coords)
    rows = mdp.P.reshape(S * A, S)
    for k, sq in enumerate(_square_matrix(sa_coords)):
        D = sq @ rows
        if np.max(np.abs(D)) <= 1e-13:
            continue
        if M.size == 0:
            return StructureReport("kernel supermodular", False, float(np.max(np.abs(D))), (k,))
        try:
            simplex_standard(M.T, D, np.zeros(M.shape[0]))
        except LPInfeasible:
            return StructureReport("kernel supermodular", False, float(np.max(np.abs(D))), (k,))
    return StructureReport("kernel supermodular", True)


def check_kernel_upper_sets(model: OrderedModel, tol: float = TOL) -> StructureReport:
    """``p(s, a, B)`` increasing and supermodular in ``(s, a)`` for every upper set ``B``.

    This gives ``(s, a) -> sum_s' f(s') p(s, a, s')`` increasing and
    supermodular for increasing supermodular ``f`` (layer-cake argument).
    A point mass at the current state already fails it on a 2-d grid, so it
    is stricter than :func:`check_kernel_supermodular` for such kernels.
    """
    mdp = model.mdp
    S, A = mdp.n_states, mdp.n_actions
    coords = np.array([np.r_[np.atleast_1d(model.state_coords[s]), np.atleast_1d(model.action_coords[a])]
                       for s in range(S) for a in range(A)])
    pairs = comparable_pairs(coords)
    worst, wit = 0.0, None
    for b, B in enumerate(upper_sets(model.state_coords)):
        mass = (mdp.P @ B.astype(float)).reshape(-1)
        rep = check_supermodular_lattice(mass, coords, tol)
        if rep.magnitude > worst:
            worst, wit = rep.magnitude, ("not supermodular", b) + rep.witness
        drop = mass[pairs[:, 0]] - mass[pairs[:, 1]] if len(pairs) else np.zeros(1)
        if drop.max() > worst:
            worst, wit = float(drop.max()), ("not increasing", b)
    return _report("kernel upper sets", worst, wit, tol)


def check_supermodular_hypotheses(model: OrderedModel, tol: float = TOL) -> StructureReport:
    """Sufficient conditions for a supermodular value function on a product state grid:
    every action feasible everywhere (the graph of the feasible-set map is
    then a lattice), ``r`` supermodular in ``(s, a)`` and the kernel
    supermodular in the sense of :func:`check_kernel_supermodular`."""
    mdp = model.mdp
    if not mdp.mask.all():
        return StructureReport("supermodular hypotheses", False, np.inf, ("restricted feasibility",),
                               notes="only full feasible sets are checked")
    S, A = mdp.n_states, mdp.n_actions
    coords = np.array([np.r_[np.atleast_1d(model.state_coords[s]), np.atleast_1d(model.action_coords[a])]
                       for s in range(S) for a in range(A)])
    rep = check_supermodular_lattice(mdp.r.reshape(-1), coords, tol)
    if not rep.holds:
        return StructureReport("supermodular hypotheses", False, rep.magnitude, ("reward",) + rep.witness)
    rep = check_kernel_supermodular(model)
    if not rep.holds:
        return StructureReport("supermodular hypotheses", False, rep.magnitude, ("kernel",) + rep.witness)
    return StructureReport("supermodular hypotheses", True)


def check_ascending(sets, tol_members=None) -> StructureReport:
    """Strong set order along a totally ordered parameter.

    ``sets[k]`` is the argmax set (iterable of integer coordinate tuples or
    integers) at the ``k``-th smallest parameter.  For ``k1 < k2``,
    ``x' in sets[k1]`` and ``x'' in sets[k2]`` the join must lie in
    ``sets[k2]`` and the meet in ``sets[k1]``.
    """
    norm = [{tuple(np.atleast_1d(x).tolist()) for x in S} for S in sets]
    for k, S in enumerate(norm):
        if not S:
            return StructureReport("ascending", False, np.inf, (k, "empty"))
    for k1, k2 in itertools.combinations(range(len(norm)), 2):
        for x1 in norm[k1]:
            for x2 in norm[k2]:
                join = tuple(max(u, v) for u, v in zip(x1, x2))
                meet = tuple(min(u, v) for u, v in zip(x1, x2))
                if join not in norm[k2] or meet not in norm[k1]:
                    return StructureReport("ascending", False, 1.0, (k1, k2, x1, x2))
    return StructureReport("ascending", True)


def argmax_correspondence(model: OrderedModel, V, tol: float = 1e-9) -> list[set]:
    """Exact argmax sets per state, as sets of action-coordinate tuples."""
    out = []
    for acts in argmax_sets(model.mdp, V, tol):
        out.append({tuple(model.action_coords[a].tolist()) for a in acts})
    return out


def check_ascending_policy(model: OrderedModel, V, tol: float = 1e-9) -> StructureReport:
    """Optimal-action sets ascending in the state along every comparable pair."""
    G = argmax_correspondence(model, V, tol)
    for i, j in comparable_pairs(model.state_coords):
        rep = check_ascending([G[i], G[j]])
        if not rep.holds:
            return StructureReport("ascending policy", False, 1.0, (int(i), int(j)))
    return StructureReport("ascending policy", True)


# -- envelope derivative ---------------------------------------------------------------


@dataclass
class EnvelopeCheck:
    fd_slope: float
    dr: float
    gap: float
    tolerance: float
    skipped: bool = False
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.skipped or self.gap <= self.tolerance


def envelope_derivative_check(grid, values, index: int, dr: float,
                              resolution: float = 0.0) -> EnvelopeCheck:
    """Central difference of ``values`` on ``grid`` at ``index`` against the
    analytic payoff derivative ``dr`` at the optimal action.

    The tolerance is ``max(1e-4, resolution)``; boundary points are skipped.
    """
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if not 0 < index < grid.size - 1:
        return EnvelopeCheck(np.nan, dr, np.nan, np.nan, True, "boundary point")
    fd = (values[index + 1] - values[index - 1]) / (grid[index + 1] - grid[index - 1])
    return EnvelopeCheck(float(fd), float(dr), abs(float(fd) - float(dr)), max(1e-4, resolution))


def consumption_envelope_check(model: OrderedModel, V, w_index: int, y_index: int,
                               utility, marginal_utility) -> EnvelopeCheck:
    """Envelope check in wealth for :func:`~dynopt.models.build_consumption_savings`.

    Wealth enters only the payoff ``u(w - a)`` (the transition depends on the
    saving ``a``), so the slope of ``V`` in wealth should equal ``u'(c*)``.
    On the grid both one-sided slopes of a concave ``V`` lie between the
    chords ``(u(c) - u(c - h)) / h`` and ``(u(c + h) - u(c)) / h``, whose gap is
    used as the resolution bound.  Skipped at the grid edges and when the
    optimal consumption is within one grid step of zero.
    """
    info = model.info
    wealth, actions, ny = info["wealth"], info["actions"], len(info["incomes"])
    nw = len(wealth)
    if not 0 < w_index < nw - 1:
        return EnvelopeCheck(np.nan, np.nan, np.nan, np.nan, True, "boundary point")
    s = w_index * ny + y_index
    acts = argmax_sets(model.mdp, V)[s]
    c = wealth[w_index] - actions[acts[0]]
    h_lo = wealth[w_index] - wealth[w_index - 1]
    h_hi = wealth[w_index + 1] - wealth[w_index]
    if c - h_lo < 0:
        return EnvelopeCheck(np.nan, np.nan, np.nan, np.nan, True, "consumption at its lower bound")
    line = np.asarray(V).reshape(nw, ny)[:, y_index]
    bound = (utility(c) - utility(c - h_lo)) / h_lo - (utility(c + h_hi) - utility(c)) / h_hi
    return envelope_derivative_check(wealth, line, w_index, marginal_utility(c), float(bound))


# -- random model families ---------------------------------------------------------------


def random_monotone_model(rng, n_states=None, n_actions=None, discount=None) -> OrderedModel:
    """Random 1-d model satisfying the monotone-value hypotheses.

    Rewards increase in the state for every action, feasible sets grow with
    the state, and each action's kernel rows increase in first-order
    dominance (tail masses are running maxima over the state).
    """
    rng = np.random.default_rng(rng)
    S = int(n_states or rng.integers(3, 9))
    A = int(n_actions or rng.integers(1, 4))
    beta = float(discount if discount is not None else rng.uniform(0.5, 0.95))
    base = rng.normal(size=A)
    r = base[None, :] + np.cumsum(rng.exponential(size=(S, A)), axis=0)
    first = np.sort(rng.integers(0, A, size=S))[::-1]  # smallest feasible action decreases
    feasible = [list(range(first[s], A)) for s in range(S)]
    P = np.zeros((S, A, S))
    for a in range(A):
        rows = rng.dirichlet(np.full(S, 0.7), size=S)
        tails = np.cumsum(rows[:, ::-1], axis=1)[:, ::-1]  # tails[s, k] = P(s' >= k)
        tails = np.maximum.accumulate(tails, axis=0)
        tails[:, 0] = 1.0
        P[:, a, :] = tails - np.c_[tails[:, 1:], np.zeros(S)]
    P = np.maximum(P, 0.0)
    P /= P.sum(axis=2, keepdims=True)
    mdp = FiniteMDP.from_arrays(P, r, beta, feasible)
    return OrderedModel(mdp, np.arange(S), np.arange(A))


def random_supermodular_model(rng, shape=None, n_actions=None, discount=None) -> OrderedModel:
    """Random model on a 2-d state grid satisfying the supermodularity hypotheses,
    with rewards and kernel also increasing in the state.

    Rewards are separable terms (increasing in the state) plus nonnegative
    multiples of products of increasing functions of two coordinates.  Transitions mix, with fixed
    weights, a point mass at the current state, point masses at states whose
    coordinates are increasing functions of a single coordinate of
    ``(s1, s2, a)``, and a fixed distribution.
    """
    rng = np.random.default_rng(rng)
    n1, n2 = shape if shape is not None else tuple(int(x) for x in rng.integers(2, 5, size=2))
    A = int(n_actions or rng.integers(2, 4))
    beta = float(discount if discount is not None else rng.uniform(0.5, 0.95))
    coords = np.array([(i, j) for i in range(n1) for j in range(n2)])
    S = len(coords)

    def inc(n_in, n_out):
        return np.sort(rng.integers(0, n_out, size=n_in))

    g = [np.cumsum(rng.exponential(size=n)) for n in (n1, n2, A)]
    c = rng.exponential(size=3)
    sep = [np.cumsum(rng.exponential(size=n1)), np.cumsum(rng.exponential(size=n2)), rng.normal(size=A)]
    r = np.zeros((S, A))
    for s, (i, j) in enumerate(coords):
        for a in range(A):
            r[s, a] = (sep[0][i] + sep[1][j] + sep[2][a] + c[0] * g[0][i] * g[1][j]
                       + c[1] * g[0][i] * g[2][a] + c[2] * g[1][j] * g[2][a])
    w = rng.dirichlet(np.ones(4))
    m_a1, m_a2 = inc(A, n1), inc(A, n2)
    m_11, m_22 = inc(n1, n1), inc(n2, n2)
    fixed = rng.dirichlet(np.ones(S))
    index = {tuple(cc): k for k, cc in enumerate(coords)}
    P = np.zeros((S, A, S))
    for s, (i, j) in enumerate(coords):
        for a in range(A):
            P[s, a, s] += w[0]
            P[s, a, index[(m_a1[a], m_22[j])]] += w[1]
            P[s, a, index[(m_11[i], m_a2[a])]] += w[2]
            P[s, a] += w[3] * fixed
    P /= P.sum(axis=2, keepdims=True)
    mdp = FiniteMDP.from_arrays(P, r, beta)
    return OrderedModel(mdp, coords, np.arange(A), {"shape": (n1, n2)})


UTILITIES = {
    "sqrt": np.sqrt,
    "log1p": np.log1p,
    "cara": lambda c: 1.0 - np.exp(-c),
}


def random_concave_consumption(rng, n_wealth=None, discount=None) -> OrderedModel:
    """Random consumption-savings model whose value is concave in wealth.

    Wealth, saving and income all live on one uniform grid, the gross return
    is 1 and utilities are concave, so next wealth never needs rounding and
    the discrete Bellman operator preserves concavity in wealth.
    """
    from .models import build_consumption_savings

    rng = np.random.default_rng(rng)
    n = int(n_wealth or rng.integers(12, 26))
    step = float(rng.choice([0.25, 0.5, 1.0]))
    wealth = step * np.arange(n)
    ny = int(rng.integers(1, 4))
    incomes = step * np.sort(rng.choice(np.arange(1, 5), size=ny, replace=False))
    Q = rng.dirichlet(np.ones(ny), size=ny)
    beta = float(discount if discount is not None else rng.uniform(0.5, 0.95))
    name = str(rng.choice(sorted(UTILITIES)))
    model = build_consumption_savings(wealth, None, incomes, Q, ((1.0, 1.0),), beta, UTILITIES[name])
    model.info["utility"] = name
    return model
