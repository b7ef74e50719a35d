"""Exact solvers: the LP formulation with a dense simplex, backward induction,
and a few classic deterministic dynamic programs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import FiniteMDP, require_discounted


class LPError(ArithmeticError):
    pass


class LPInfeasible(LPError):
    pass


class LPUnbounded(LPError):
    pass


@dataclass(frozen=True)
class LinearProgram:
    """``min c @ x`` subject to ``A @ x >= b`` with ``x`` free."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    row_labels: tuple = ()

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if A.ndim != 2 or A.shape != (b.size, c.size):
            raise ValueError(f"inconsistent LP dimensions: A {A.shape}, b {b.shape}, c {c.shape}")
        if np.any(np.all(A == 0, axis=1)):
            raise ValueError("every constraint row needs at least one nonzero coefficient")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_constraints(self) -> int:
        return self.b.size

    def to_text(self) -> str:
        """Plain-text tableau: one line per constraint, coefficients then ``>= b``."""
        lines = ["min " + " ".join(f"{v:.17g}" for v in self.c)]
        for i in range(self.n_constraints):
            label = f"{self.row_labels[i]} " if self.row_labels else ""
            coeffs = " ".join(f"{v:.17g}" for v in self.A[i])
            lines.append(f"{label}{coeffs} >= {self.b[i]:.17g}")
        return "\n".join(lines) + "\n"


def lp_formulate(mdp: FiniteMDP) -> LinearProgram:
    """One variable per state and one ``>=`` row per feasible pair:
    ``x_s - beta sum_s' p(s,a,s') x_s' >= r(s,a)``."""
    require_discounted(mdp)
    pairs = np.argwhere(mdp.mask)
    A = -mdp.discount * mdp.P[pairs[:, 0], pairs[:, 1]]
    A[np.arange(len(pairs)), pairs[:, 0]] += 1.0
    b = mdp.r[pairs[:, 0], pairs[:, 1]]
    labels = tuple((int(s), int(a)) for s, a in pairs)
    return LinearProgram(np.ones(mdp.n_states), A, b, labels)


def _pivot(T, i, j):
    T[i] /= T[i, j]
    col = T[:, j].copy()
    col[i] = 0.0
    T -= np.outer(col, T[i])


def _run_simplex(T, basis, n_allowed, eps, max_pivots):
    # Bland's rule: lowest-index entering column, lowest-index leaving variable among ties
    m = T.shape[0] - 1
    for _ in range(max_pivots):
        rc = T[-1, :n_allowed]
        cand = np.flatnonzero(rc < -eps)
        if cand.size == 0:
            return
        j = cand[0]
        col = T[:m, j]
        pos = col > eps
        if not pos.any():
            raise LPUnbounded("objective is unbounded below")
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / col[pos]
        rmin = ratios.min()
        ties = np.flatnonzero(ratios <= rmin + eps * max(1.0, abs(rmin)))
        i = ties[np.argmin(basis[ties])]
        _pivot(T, i, j)
        basis[i] = j
    raise LPError(f"simplex exceeded {max_pivots} pivots")


def simplex_standard(A, b, c, eps: float = 1e-11, max_pivots: int = 100_000):
    """Two-phase dense simplex for ``min c @ x`` s.t. ``A @ x = b``, ``x >= 0``.

    Returns the optimal basic solution.  The basic variables are recomputed
    from the original data at the end by one LU solve, which removes the
    round-off accumulated by the tableau pivots.
    """
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1

    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = np.arange(n, n + m)
    _run_simplex(T, basis, n + m, eps, max_pivots)
    if -T[-1, -1] > eps * max(1.0, b.sum()) * 10:
        raise LPInfeasible(f"phase one ended with infeasibility {-T[-1, -1]:.3g}")

    keep = np.ones(m, dtype=bool)
    for i in range(m):
        if basis[i] >= n:
            row = np.abs(T[i, :n])
            j = int(np.argmax(row)) if n else 0
            if n and row[j] > 1e3 * eps:
                _pivot(T, i, j)
                basis[i] = j
            else:
                keep[i] = False  # redundant equality
    T = np.vstack([T[:m][keep], T[-1:]])
    basis = basis[keep]
    rows = np.flatnonzero(keep)
    mk = rows.size

    T[-1, :] = 0.0
    T[-1, :n] = c
    for i in range(mk):
        T[-1] -= c[basis[i]] * T[i]
    _run_simplex(T, basis, n, eps, max_pivots)

    x = np.zeros(n)
    B = A[rows][:, basis]
    try:
        x_B = np.linalg.solve(B, b[rows])
    except np.linalg.LinAlgError:
        x_B = T[:mk, -1]
    x[basis] = x_B
    return x


def lp_solve(lp: LinearProgram) -> tuple[np.ndarray, float]:
    """Solve ``min c @ x`` s.t. ``A @ x >= b`` (free ``x``) by the dense simplex.

    Free variables are split as ``x = x_plus - x_minus`` and each row gets a
    surplus variable, giving a standard-form problem.
    """
    m, n = lp.A.shape
    A_std = np.hstack([lp.A, -lp.A, -np.eye(m)])
    c_std = np.concatenate([lp.c, -lp.c, np.zeros(m)])
    z = simplex_standard(A_std, lp.b, c_std)
    x = z[:n] - z[n:2 * n]
    return x, float(lp.c @ x)


def lp_value(mdp: FiniteMDP) -> np.ndarray:
    """Value function of a discounted MDP via its linear program."""
    x, _ = lp_solve(lp_formulate(mdp))
    return x


@dataclass(frozen=True)
class HorizonValues:
    """``values[t - 1]`` is ``V_t`` for ``t = 1..T+1``; ``policies[t - 1]`` is the period-``t`` argmax."""

    values: np.ndarray
    policies: np.ndarray

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    def V(self, t: int) -> np.ndarray:
        return self.values[t - 1]


def backward_induction(mdp: FiniteMDP, horizon: int, discount: float = 1.0) -> HorizonValues:
    """Finite-horizon recursion ``V_t = max_a r + discount * P V_{t+1}``, ``V_{T+1} = 0``.

    The model's own discount is ignored: by default no discounting is applied.
    Ties in the per-period policy go to the lowest action index.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    S = mdp.n_states
    values = np.zeros((horizon + 1, S))
    policies = np.zeros((horizon, S), dtype=np.intp)
    for t in range(horizon - 1, -1, -1):
        q = mdp.r + discount * (mdp.P @ values[t + 1])
        q = np.where(mdp.mask, q, -np.inf)
        policies[t] = np.argmax(q, axis=1)
        values[t] = q.max(axis=1)
    return HorizonValues(values, policies)


# -- classic deterministic programs ---------------------------------------------


def max_product_partition(n: int, a: int) -> int:
    """Largest product of ``n`` non-negative integers summing to ``a``.

    ``v_1(a) = a`` and ``v_n(a) = max_{0 <= y <= a} y * v_{n-1}(a - y)``.
    """
    if n < 1 or a < 0:
        raise ValueError("need n >= 1 and a >= 0")
    v = list(range(a + 1))
    for _ in range(n - 1):
        v = [max(y * v[b - y] for y in range(b + 1)) for b in range(a + 1)]
    return v[a]


class NotRepresentable:
    """Result of :func:`coin_change_min` when the amount cannot be formed."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NOT_REPRESENTABLE"


NOT_REPRESENTABLE = NotRepresentable()


def coin_change_min(numbers, amount: int):
    """Fewest elements of ``numbers`` (with repetition) summing to ``amount``."""
    numbers = sorted({int(x) for x in numbers})
    if not numbers or numbers[0] <= 0:
        raise ValueError("numbers must be a nonempty set of positive integers")
    if amount < 0:
        raise ValueError("amount must be >= 0")
    INF = amount + 1
    best = [0] + [INF] * amount
    for v in range(1, amount + 1):
        for x in numbers:
            if x > v:
                break
            if best[v - x] + 1 < best[v]:
                best[v] = best[v - x] + 1
    return NOT_REPRESENTABLE if best[amount] >= INF else best[amount]


def edit_distance(w1: str, w2: str) -> int:
    """Levenshtein distance with unit-cost insertions, deletions and substitutions."""
    prev = list(range(len(w2) + 1))
    for i, ch in enumerate(w1, 1):
        cur = [i] + [0] * len(w2)
        for j, ch2 in enumerate(w2, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ch != ch2))
        prev = cur
    return prev[-1]
