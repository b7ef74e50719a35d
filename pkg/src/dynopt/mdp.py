"""Finite Markov decision processes and the discounted Bellman machinery.

A :class:`FiniteMDP` is the tuple of finite states, finite actions, feasible
action sets, a transition kernel ``p(s, a, s')``, realized rewards
``R(s, a, s')`` and a discount factor.  Value functions are plain float arrays
of shape ``(n_states,)``, Q-tables are ``(n_states, n_actions)`` arrays whose
infeasible entries are ignored (operators write ``-inf`` there), deterministic
policies are integer arrays of shape ``(n_states,)`` and stochastic policies
are ``(n_states, n_actions)`` row-stochastic arrays supported on the feasible
sets.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

ROW_SUM_ATOL = 1e-12


class MDPValidationError(ValueError):
    """Raised when a model or policy violates one of its invariants."""


@dataclass(frozen=True)
class SolveStats:
    iterations: int
    final_residual: float
    wall_time: float
    converged: bool = True

    def as_dict(self) -> dict:
        # wall time is left out on purpose: manifests must be reproducible
        return {
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "converged": self.converged,
        }


class FiniteMDP:
    """Immutable finite MDP built from sparse ``(s, a, s', p, R)`` triples.

    Parameters
    ----------
    n_states, n_actions : int
        Sizes of the state and action sets.
    feasible : sequence of sequences of int
        ``feasible[s]`` lists the actions available in state ``s``.
    transitions : iterable of (s, a, s_next, prob, reward)
        One entry per positive-probability transition of a feasible pair.
        Zero-probability entries are accepted and dropped.
    discount : float
        Discount factor.  Stored for every model; discounted solvers require
        ``0 <= discount < 1``.
    """

    def __init__(
        self,
        n_states: int,
        n_actions: int,
        feasible: Sequence[Sequence[int]],
        transitions: Iterable[Sequence[float]],
        discount: float,
    ):
        n_states = int(n_states)
        n_actions = int(n_actions)
        if n_states < 1 or n_actions < 1:
            raise MDPValidationError("n_states and n_actions must be positive")
        discount = float(discount)
        if not np.isfinite(discount) or discount < 0:
            raise MDPValidationError(f"discount must be finite and >= 0, got {discount}")
        if len(feasible) != n_states:
            raise MDPValidationError(
                f"feasible has {len(feasible)} entries, expected one per state ({n_states})"
            )
        mask = np.zeros((n_states, n_actions), dtype=bool)
        for s, acts in enumerate(feasible):
            acts = [int(a) for a in acts]
            if not acts:
                raise MDPValidationError(f"feasible set of state {s} is empty")
            for a in acts:
                if not 0 <= a < n_actions:
                    raise MDPValidationError(f"state {s}: action {a} out of range")
                if mask[s, a]:
                    raise MDPValidationError(f"state {s}: action {a} listed twice")
                mask[s, a] = True

        rows = []
        seen = set()
        for entry in transitions:
            if len(entry) != 5:
                raise MDPValidationError(f"transition entry {entry!r} must have 5 fields")
            s, a, s2 = (int(entry[0]), int(entry[1]), int(entry[2]))
            p, rew = float(entry[3]), float(entry[4])
            if not (0 <= s < n_states and 0 <= s2 < n_states and 0 <= a < n_actions):
                raise MDPValidationError(f"transition {entry!r} has an index out of range")
            if not mask[s, a]:
                raise MDPValidationError(f"transition {entry!r} belongs to infeasible pair ({s}, {a})")
            if not np.isfinite(p) or p < 0:
                raise MDPValidationError(f"transition {entry!r} has invalid probability {p}")
            if not np.isfinite(rew):
                raise MDPValidationError(f"transition {entry!r} has non-finite reward")
            if (s, a, s2) in seen:
                raise MDPValidationError(f"duplicate transition ({s}, {a}, {s2})")
            seen.add((s, a, s2))
            if p > 0:
                rows.append((s, a, s2, p, rew))

        if rows:
            arr = np.array(rows, dtype=float)
        else:
            arr = np.zeros((0, 5))
        self._s = arr[:, 0].astype(np.intp)
        self._a = arr[:, 1].astype(np.intp)
        self._s2 = arr[:, 2].astype(np.intp)
        self._p = arr[:, 3].copy()
        self._R = arr[:, 4].copy()

        sums = np.zeros((n_states, n_actions))
        np.add.at(sums, (self._s, self._a), self._p)
        bad = mask & (np.abs(sums - 1.0) > ROW_SUM_ATOL)
        if bad.any():
            s, a = map(int, np.argwhere(bad)[0])
            raise MDPValidationError(
                f"transition row (s={s}, a={a}) sums to {float(sums[s, a])!r}, not 1"
            )

        self.n_states = n_states
        self.n_actions = n_actions
        self.discount = discount
        self.feasible = tuple(tuple(int(a) for a in np.flatnonzero(mask[s])) for s in range(n_states))
        mask.setflags(write=False)
        self.mask = mask
        for arr_ in (self._s, self._a, self._s2, self._p, self._R):
            arr_.setflags(write=False)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_arrays(cls, P, R, discount, feasible=None) -> "FiniteMDP":
        """Build from dense arrays.

        ``P`` has shape ``(S, A, S)``.  ``R`` is either ``(S, A, S)`` realized
        rewards or ``(S, A)`` rewards independent of the next state.  When
        ``feasible`` is omitted every action is feasible everywhere.
        """
        P = np.asarray(P, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise MDPValidationError(f"P must have shape (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        R = np.asarray(R, dtype=float)
        if R.shape == (S, A):
            R = np.broadcast_to(R[:, :, None], (S, A, S))
        elif R.shape != (S, A, S):
            raise MDPValidationError(f"R must have shape (S, A) or (S, A, S), got {R.shape}")
        if feasible is None:
            feasible = [range(A)] * S
        trans = []
        for s in range(S):
            for a in feasible[s]:
                for s2 in np.flatnonzero(P[s, a]):
                    trans.append((s, a, int(s2), P[s, a, s2], R[s, a, s2]))
        return cls(S, A, [list(f) for f in feasible], trans, discount)

    def with_discount(self, discount: float) -> "FiniteMDP":
        return FiniteMDP(self.n_states, self.n_actions, self.feasible, self.triples(), discount)

    def with_rewards(self, reward_fn: Callable[[int, int, int, float], float]) -> "FiniteMDP":
        """Copy of the model with ``R(s, a, s')`` replaced by ``reward_fn(s, a, s', R)``."""
        trans = [(s, a, s2, p, reward_fn(s, a, s2, r)) for s, a, s2, p, r in self.triples()]
        return FiniteMDP(self.n_states, self.n_actions, self.feasible, trans, self.discount)

    def triples(self) -> list[tuple[int, int, int, float, float]]:
        return [
            (int(s), int(a), int(s2), float(p), float(r))
            for s, a, s2, p, r in zip(self._s, self._a, self._s2, self._p, self._R)
        ]

    # -- dense views ----------------------------------------------------------

    @cached_property
    def P(self) -> np.ndarray:
        """Dense kernel of shape ``(S, A, S)``; zero rows for infeasible pairs."""
        P = np.zeros((self.n_states, self.n_actions, self.n_states))
        P[self._s, self._a, self._s2] = self._p
        P.setflags(write=False)
        return P

    @cached_property
    def R(self) -> np.ndarray:
        R = np.zeros((self.n_states, self.n_actions, self.n_states))
        R[self._s, self._a, self._s2] = self._R
        R.setflags(write=False)
        return R

    @cached_property
    def r(self) -> np.ndarray:
        """Expected one-step reward ``r(s, a) = sum_s' p(s,a,s') R(s,a,s')``."""
        r = np.einsum("ijk,ijk->ij", self.P, self.R)
        r.setflags(write=False)
        return r

    @property
    def max_abs_reward(self) -> float:
        return float(np.max(np.abs(self._R))) if self._R.size else 0.0

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "discount": self.discount,
            "feasible": [list(f) for f in self.feasible],
            "transitions": [list(t) for t in self.triples()],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FiniteMDP":
        missing = {"n_states", "n_actions", "discount", "feasible", "transitions"} - set(data)
        if missing:
            raise MDPValidationError(f"model is missing fields: {sorted(missing)}")
        return cls(
            data["n_states"], data["n_actions"], data["feasible"], data["transitions"], data["discount"]
        )

    def __repr__(self) -> str:
        return (
            f"FiniteMDP(n_states={self.n_states}, n_actions={self.n_actions}, "
            f"pairs={int(self.mask.sum())}, discount={self.discount})"
        )


def load_mdp(path) -> FiniteMDP:
    with open(path) as fh:
        return FiniteMDP.from_dict(json.load(fh))


def save_mdp(mdp: FiniteMDP, path) -> None:
    with open(path, "w") as fh:
        json.dump(mdp.to_dict(), fh, indent=1)


# -- validation helpers -------------------------------------------------------


def require_discounted(mdp: FiniteMDP) -> None:
    if not mdp.discount < 1:
        raise MDPValidationError(
            f"discount {mdp.discount} >= 1: discounted solvers need discount < 1; "
            "use backward_induction for finite horizons or the avg_reward module"
        )


def _check_values(mdp: FiniteMDP, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (mdp.n_states,):
        raise MDPValidationError(f"value vector has shape {f.shape}, expected ({mdp.n_states},)")
    return f


def _check_q(mdp: FiniteMDP, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (mdp.n_states, mdp.n_actions):
        raise MDPValidationError(
            f"Q-table has shape {q.shape}, expected ({mdp.n_states}, {mdp.n_actions})"
        )
    return q


def as_stochastic(mdp: FiniteMDP, policy) -> np.ndarray:
    """Validate ``policy`` and return it as an ``(S, A)`` probability matrix."""
    policy = np.asarray(policy)
    if policy.ndim == 1:
        if policy.shape != (mdp.n_states,):
            raise MDPValidationError(f"policy has shape {policy.shape}, expected ({mdp.n_states},)")
        acts = policy.astype(np.intp)
        if np.any(acts != policy) or np.any(acts < 0) or np.any(acts >= mdp.n_actions):
            raise MDPValidationError("deterministic policy must hold valid action indices")
        bad = ~mdp.mask[np.arange(mdp.n_states), acts]
        if bad.any():
            s = int(np.flatnonzero(bad)[0])
            raise MDPValidationError(f"policy action {int(acts[s])} is infeasible in state {s}")
        pi = np.zeros((mdp.n_states, mdp.n_actions))
        pi[np.arange(mdp.n_states), acts] = 1.0
        return pi
    pi = np.asarray(policy, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise MDPValidationError(
            f"policy has shape {pi.shape}, expected ({mdp.n_states}, {mdp.n_actions})"
        )
    if np.any(pi < 0) or not np.all(np.isfinite(pi)):
        raise MDPValidationError("policy probabilities must be finite and non-negative")
    if np.any(pi[~mdp.mask] > 0):
        s, a = map(int, np.argwhere((pi > 0) & ~mdp.mask)[0])
        raise MDPValidationError(f"policy puts mass on infeasible action {a} in state {s}")
    sums = pi.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > ROW_SUM_ATOL):
        s = int(np.argmax(np.abs(sums - 1.0)))
        raise MDPValidationError(f"policy row {s} sums to {float(sums[s])!r}, not 1")
    return pi


def uniform_policy(mdp: FiniteMDP) -> np.ndarray:
    return mdp.mask / mdp.mask.sum(axis=1, keepdims=True)


def policy_reward(mdp: FiniteMDP, policy) -> np.ndarray:
    """``r_pi(s) = sum_a pi(s,a) r(s,a)``."""
    pi = as_stochastic(mdp, policy)
    return np.einsum("sa,sa->s", pi, mdp.r)


def policy_matrix(mdp: FiniteMDP, policy) -> np.ndarray:
    """Transition matrix ``P_pi(s, s') = sum_a pi(s,a) p(s,a,s')``."""
    pi = as_stochastic(mdp, policy)
    return np.einsum("sa,sak->sk", pi, mdp.P)


# -- operators ----------------------------------------------------------------


def q_values(mdp: FiniteMDP, f, discount: float | None = None) -> np.ndarray:
    """``Q(s, a, f) = r(s,a) + beta * sum_s' p(s,a,s') f(s')``, ``-inf`` off the feasible set."""
    f = _check_values(mdp, f)
    beta = mdp.discount if discount is None else discount
    q = mdp.r + beta * (mdp.P @ f)
    return np.where(mdp.mask, q, -np.inf)


def bellman_apply(mdp: FiniteMDP, f) -> np.ndarray:
    """Bellman optimality operator ``Tf(s) = max_a Q(s, a, f)``."""
    return q_values(mdp, f).max(axis=1)


def bellman_policy_apply(mdp: FiniteMDP, policy, f) -> np.ndarray:
    """Policy operator ``T_pi f(s) = sum_a pi(s,a) Q(s, a, f)``."""
    pi = as_stochastic(mdp, policy)
    f = _check_values(mdp, f)
    q = mdp.r + mdp.discount * (mdp.P @ f)
    return np.einsum("sa,sa->s", pi, np.where(mdp.mask, q, 0.0))


def q_max(mdp: FiniteMDP, q) -> np.ndarray:
    """``max_a Q(s, a)`` over the feasible actions of each state."""
    q = _check_q(mdp, q)
    return np.where(mdp.mask, q, -np.inf).max(axis=1)


def q_backup(mdp: FiniteMDP, q) -> np.ndarray:
    """Q-operator ``HQ(s,a) = sum_s' p(s,a,s') (R(s,a,s') + beta max_a' Q(s',a'))``.

    Routed through :func:`q_values` so that ``max_a HQ == T(max_a Q)`` holds
    bit for bit.
    """
    return q_values(mdp, q_max(mdp, q))


def q_sup_distance(mdp: FiniteMDP, q1, q2) -> float:
    """Sup-norm distance between two Q-tables over feasible pairs."""
    q1 = _check_q(mdp, q1)
    q2 = _check_q(mdp, q2)
    return float(np.max(np.abs(q1[mdp.mask] - q2[mdp.mask])))


def greedy_policy(mdp: FiniteMDP, f) -> np.ndarray:
    """Greedy deterministic policy for ``f``; ties go to the lowest action index."""
    return np.argmax(q_values(mdp, f), axis=1)


def argmax_sets(mdp: FiniteMDP, f, tol: float = 1e-9) -> list[tuple[int, ...]]:
    """All actions within ``tol`` of the best one-step lookahead value, per state."""
    q = q_values(mdp, f)
    best = q.max(axis=1, keepdims=True)
    hit = (q >= best - tol) & mdp.mask
    return [tuple(int(a) for a in np.flatnonzero(row)) for row in hit]


# -- solvers ------------------------------------------------------------------


def vi_threshold(tol: float, discount: float) -> float:
    """Residual level at which ``||f_{k+1} - V|| <= tol / 2`` is guaranteed."""
    if discount == 0:
        return np.inf
    return tol * (1 - discount) / (2 * discount)


def value_iteration(
    mdp: FiniteMDP,
    init=None,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> tuple[np.ndarray, SolveStats]:
    """Iterate ``f <- Tf`` until the result is within ``tol`` of the value function.

    Stops once ``||f_{k+1} - f_k|| <= tol (1 - beta) / (2 beta)``.  When
    ``max_iter`` sweeps are exhausted the last iterate is returned with
    ``stats.converged`` set to False.
    """
    require_discounted(mdp)
    if not tol > 0:
        raise ValueError("tol must be positive")
    f = np.zeros(mdp.n_states) if init is None else _check_values(mdp, init).copy()
    threshold = vi_threshold(tol, mdp.discount)
    start = time.perf_counter()
    residual = np.inf
    k = 0
    while k < max_iter:
        f_new = bellman_apply(mdp, f)
        residual = float(np.max(np.abs(f_new - f)))
        f = f_new
        k += 1
        if residual <= threshold:
            return f, SolveStats(k, residual, time.perf_counter() - start, True)
    return f, SolveStats(k, residual, time.perf_counter() - start, False)


def q_value_iteration(mdp: FiniteMDP, tol: float = 1e-12, max_iter: int = 1_000_000):
    """Fixed point of :func:`q_backup`, with the same stopping rule as value iteration."""
    require_discounted(mdp)
    q = np.where(mdp.mask, 0.0, -np.inf)
    threshold = vi_threshold(tol, mdp.discount)
    start = time.perf_counter()
    residual = np.inf
    for k in range(1, max_iter + 1):
        q_new = q_backup(mdp, q)
        residual = q_sup_distance(mdp, q_new, q)
        q = q_new
        if residual <= threshold:
            return q, SolveStats(k, residual, time.perf_counter() - start, True)
    return q, SolveStats(max_iter, residual, time.perf_counter() - start, False)


@dataclass
class AVIResult:
    distances: np.ndarray
    bound: float
    tail_max: float
    iterates: list = field(default_factory=list, repr=False)


def approximate_value_iteration(
    mdp: FiniteMDP,
    init=None,
    noise_amplitude: float = 0.0,
    rng=None,
    iters: int = 200,
    V=None,
) -> AVIResult:
    """Value iteration with bounded additive errors ``f_{k+1} = T f_k + e_k``.

    Every entry of ``e_k`` is uniform on ``[-delta, delta]``.  Returns the
    sup-distances ``d(f_k, V)`` for ``k = 0..iters`` together with the
    asymptotic bound ``delta / (1 - beta)`` and the largest distance over the
    last quarter of the iterates.
    """
    require_discounted(mdp)
    delta = float(noise_amplitude)
    if delta < 0:
        raise ValueError("noise_amplitude must be non-negative")
    rng = np.random.default_rng(rng)
    if V is None:
        V, _ = value_iteration(mdp, tol=1e-12)
    V = _check_values(mdp, V)
    f = np.zeros(mdp.n_states) if init is None else _check_values(mdp, init).copy()
    dists = [float(np.max(np.abs(f - V)))]
    for _ in range(iters):
        noise = rng.uniform(-delta, delta, size=mdp.n_states) if delta > 0 else 0.0
        f = bellman_apply(mdp, f) + noise
        dists.append(float(np.max(np.abs(f - V))))
    dists = np.array(dists)
    tail = dists[len(dists) - max(1, len(dists) // 4):]
    return AVIResult(dists, delta / (1 - mdp.discount), float(tail.max()))


def policy_evaluation(
    mdp: FiniteMDP,
    policy,
    method: str = "direct",
    tol: float = 1e-10,
    max_iter: int = 1_000_000,
) -> np.ndarray:
    """Discounted value of a stationary policy.

    ``method="direct"`` solves ``(I - beta P_pi) V = r_pi`` by LU with partial
    pivoting; ``method="iterative"`` iterates ``T_pi`` until
    ``||T_pi V - V|| <= tol``.
    """
    require_discounted(mdp)
    pi = as_stochastic(mdp, policy)
    if method == "direct":
        A = np.eye(mdp.n_states) - mdp.discount * policy_matrix(mdp, pi)
        b = policy_reward(mdp, pi)
        try:
            V = np.linalg.solve(A, b)
        except np.linalg.LinAlgError as exc:
            raise ArithmeticError(f"policy evaluation system is numerically singular: {exc}")
        return V
    if method == "iterative":
        V = np.zeros(mdp.n_states)
        for _ in range(max_iter):
            V_new = bellman_policy_apply(mdp, pi, V)
            if np.max(np.abs(V_new - V)) <= tol * (1 - mdp.discount):
                return V_new
            V = V_new
        raise ArithmeticError("iterative policy evaluation did not converge")
    raise ValueError(f"unknown method {method!r}")


# -- contraction diagnostics ----------------------------------------------------


def sampled_contraction_ratio(apply, sample, distance, n_pairs: int, rng) -> float:
    """Largest observed ``d(apply(f), apply(g)) / d(f, g)`` over random pairs.

    ``sample(rng)`` draws one argument; pairs at distance zero are skipped.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(n_pairs):
        f, g = sample(rng), sample(rng)
        d = distance(f, g)
        if d == 0:
            continue
        worst = max(worst, distance(apply(f), apply(g)) / d)
    return worst


def contraction_estimate(
    mdp: FiniteMDP, n_pairs: int = 100, rng=None, operator: str = "T", policy=None
) -> float:
    """Sampled contraction modulus of ``T`` (default), ``T_pi`` or ``H``."""
    scale = 1.0 + mdp.max_abs_reward / max(1e-12, 1 - min(mdp.discount, 0.999))

    def vec(g):
        return g.normal(scale=scale, size=mdp.n_states)

    def sup(f, g):
        return float(np.max(np.abs(f - g)))

    if operator == "T":
        return sampled_contraction_ratio(lambda f: bellman_apply(mdp, f), vec, sup, n_pairs, rng)
    if operator == "T_pi":
        if policy is None:
            raise ValueError("operator 'T_pi' needs a policy")
        pi = as_stochastic(mdp, policy)
        return sampled_contraction_ratio(lambda f: bellman_policy_apply(mdp, pi, f), vec, sup, n_pairs, rng)
    if operator == "H":
        def qsample(g):
            return np.where(mdp.mask, g.normal(scale=scale, size=mdp.mask.shape), -np.inf)

        return sampled_contraction_ratio(
            lambda q: q_backup(mdp, q), qsample, lambda a, b: q_sup_distance(mdp, a, b), n_pairs, rng
        )
    raise ValueError(f"unknown operator {operator!r}")
