"""Hard state aggregation: the operator W, its fixed point and the value-spread bound."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .mdp import FiniteMDP, MDPValidationError, SolveStats, require_discounted, vi_threshold


@dataclass(frozen=True)
class AggregationMap:
    """Partition of the states into aggregates with disaggregation weights.

    ``membership[s]`` is the aggregate containing state ``s``; ``d_weights[s]``
    is the weight of ``s`` inside its aggregate.  Weights are positive and sum
    to one within every aggregate.  Membership weights are the indicators of
    the partition.
    """

    membership: np.ndarray
    d_weights: np.ndarray

    def __post_init__(self):
        mem = np.asarray(self.membership)
        if mem.ndim != 1 or mem.size == 0 or np.any(mem != mem.astype(np.intp)):
            raise MDPValidationError("membership must be a nonempty vector of aggregate indices")
        mem = mem.astype(np.intp)
        if mem.min() < 0:
            raise MDPValidationError("aggregate indices must be non-negative")
        n_agg = int(mem.max()) + 1
        counts = np.bincount(mem, minlength=n_agg)
        if np.any(counts == 0):
            raise MDPValidationError(f"aggregate {int(np.argmin(counts))} is empty")
        d = np.asarray(self.d_weights, dtype=float)
        if d.shape != mem.shape:
            raise MDPValidationError("d_weights needs one entry per state")
        if np.any(d <= 0) or not np.all(np.isfinite(d)):
            raise MDPValidationError("d_weights must be positive on their own aggregate")
        sums = np.bincount(mem, weights=d, minlength=n_agg)
        if np.any(np.abs(sums - 1) > 1e-12):
            x = int(np.argmax(np.abs(sums - 1)))
            raise MDPValidationError(f"d_weights of aggregate {x} sum to {float(sums[x])!r}, not 1")
        object.__setattr__(self, "membership", mem)
        object.__setattr__(self, "d_weights", d)

    @classmethod
    def uniform(cls, membership) -> "AggregationMap":
        mem = np.asarray(membership, dtype=np.intp)
        counts = np.bincount(mem)
        return cls(mem, 1.0 / counts[mem])

    @classmethod
    def blocks(cls, n_states: int, n_blocks: int) -> "AggregationMap":
        """Consecutive equal-size blocks with uniform weights."""
        if n_states % n_blocks:
            raise MDPValidationError("n_states must be a multiple of n_blocks")
        return cls.uniform(np.repeat(np.arange(n_blocks), n_states // n_blocks))

    @classmethod
    def identity(cls, n_states: int) -> "AggregationMap":
        return cls(np.arange(n_states), np.ones(n_states))

    @classmethod
    def from_dict(cls, data: dict) -> "AggregationMap":
        if "membership" not in data:
            raise MDPValidationError("aggregation map needs a 'membership' field")
        if data.get("d_weights") is None:
            return cls.uniform(data["membership"])
        return cls(data["membership"], data["d_weights"])

    def to_dict(self) -> dict:
        return {"membership": self.membership.tolist(), "d_weights": self.d_weights.tolist()}

    @property
    def n_aggregates(self) -> int:
        return int(self.membership.max()) + 1

    @property
    def n_states(self) -> int:
        return self.membership.size

    def members(self, x: int) -> np.ndarray:
        return np.flatnonzero(self.membership == x)

    def lift(self, f) -> np.ndarray:
        """Piecewise-constant extension ``s -> f(membership[s])``."""
        return np.asarray(f, dtype=float)[self.membership]


def load_aggregation(path) -> AggregationMap:
    with open(path) as fh:
        return AggregationMap.from_dict(json.load(fh))


def _check(mdp: FiniteMDP, agg: AggregationMap, f=None):
    if agg.n_states != mdp.n_states:
        raise MDPValidationError(
            f"aggregation covers {agg.n_states} states, model has {mdp.n_states}"
        )
    if f is not None:
        f = np.asarray(f, dtype=float)
        if f.shape != (agg.n_aggregates,):
            raise MDPValidationError(
                f"aggregate vector has shape {f.shape}, expected ({agg.n_aggregates},)"
            )
        return f


def aggregate_operator_apply(mdp: FiniteMDP, agg: AggregationMap, f) -> np.ndarray:
    """``Wf(x) = sum_{s in N(x)} d(s) max_a sum_s' p(s,a,s') (R(s,a,s') + beta f(x(s')))``."""
    f = _check(mdp, agg, f)
    q = mdp.r + mdp.discount * (mdp.P @ agg.lift(f))
    best = np.where(mdp.mask, q, -np.inf).max(axis=1)
    return np.bincount(agg.membership, weights=agg.d_weights * best, minlength=agg.n_aggregates)


def solve_aggregate(mdp: FiniteMDP, agg: AggregationMap, tol: float = 1e-10,
                    max_iter: int = 100_000, init=None):
    """Fixed point of W by successive approximation, stopped as in value iteration."""
    require_discounted(mdp)
    _check(mdp, agg)
    if not tol > 0:
        raise ValueError("tol must be positive")
    f = np.zeros(agg.n_aggregates) if init is None else _check(mdp, agg, init).copy()
    threshold = vi_threshold(tol, mdp.discount)
    start = time.perf_counter()
    residual = np.inf
    for k in range(1, max_iter + 1):
        f_new = aggregate_operator_apply(mdp, agg, f)
        residual = float(np.max(np.abs(f_new - f)))
        f = f_new
        if residual <= threshold:
            return f, SolveStats(k, residual, time.perf_counter() - start, True)
    return f, SolveStats(max_iter, residual, time.perf_counter() - start, False)


@dataclass(frozen=True)
class AggregationBound:
    epsilon: float
    bound: float
    max_violation: float  # max |V(s) - f*(x(s))|

    @property
    def holds(self) -> bool:
        return self.max_violation <= self.bound + 1e-8


def value_spread(agg: AggregationMap, V) -> float:
    """``max_x (max_{s in N(x)} V(s) - min_{s in N(x)} V(s))``."""
    V = np.asarray(V, dtype=float)
    hi = np.full(agg.n_aggregates, -np.inf)
    lo = np.full(agg.n_aggregates, np.inf)
    np.maximum.at(hi, agg.membership, V)
    np.minimum.at(lo, agg.membership, V)
    return float(np.max(hi - lo))


def aggregation_error_bound(mdp: FiniteMDP, agg: AggregationMap, V, f_star) -> AggregationBound:
    """Within-aggregate spread ``eps`` of ``V``, the bound ``eps / (1 - beta)``
    and the largest observed ``|V(s) - f*(x)|``."""
    require_discounted(mdp)
    f_star = _check(mdp, agg, f_star)
    V = np.asarray(V, dtype=float)
    eps = value_spread(agg, V)
    gap = float(np.max(np.abs(V - agg.lift(f_star))))
    return AggregationBound(eps, eps / (1 - mdp.discount), gap)


def aggregate_mdp(mdp: FiniteMDP, agg: AggregationMap) -> FiniteMDP:
    """Model on the aggregates: from ``x`` draw ``s ~ d``, act, and report the
    aggregate of the next state.

    Requires every action to be feasible everywhere.  Its Q-learning limit
    satisfies a Bellman equation on X that averages over ``d`` before the max
    rather than after, so its values differ from W's fixed point in general.
    """
    if not mdp.mask.all():
        raise MDPValidationError("aggregate model needs every action feasible in every state")
    X, A = agg.n_aggregates, mdp.n_actions
    trans = []
    for x in range(X):
        mem = agg.members(x)
        w = agg.d_weights[mem]
        for a in range(A):
            p = np.zeros(X)
            rew = np.zeros(X)
            for s, ws in zip(mem, w):
                for s2 in np.flatnonzero(mdp.P[s, a]):
                    y = agg.membership[s2]
                    mass = ws * mdp.P[s, a, s2]
                    p[y] += mass
                    rew[y] += mass * mdp.R[s, a, s2]
            for y in np.flatnonzero(p > 0):
                trans.append((x, a, int(y), p[y], rew[y] / p[y]))
    # renormalize round-off so the row-sum invariant holds exactly enough
    return FiniteMDP(X, A, [range(A)] * X, _renormalize(trans), mdp.discount)


def _renormalize(trans):
    by_pair = {}
    for t in trans:
        by_pair.setdefault((t[0], t[1]), []).append(t)
    out = []
    for rows in by_pair.values():
        tot = sum(r[3] for r in rows)
        out += [(s, a, y, p / tot, r) for s, a, y, p, r in rows]
    return out
