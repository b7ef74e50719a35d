"""Model-free tabular learning: Q-learning, SARSA, linear Q-learning and
exploration rules, all driven by a :class:`Simulator`.

Learners never see a :class:`~dynopt.mdp.FiniteMDP`; they only call
``sim.step``.  Wrap a model with :class:`MDPSimulator` to learn on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .mdp import FiniteMDP


class DivergenceError(ArithmeticError):
    """An iterate became non-finite or exceeded the divergence guard."""


class Simulator:
    """Sampling interface: ``step(s, a, rng) -> (s_next, reward)``.

    Subclasses set ``n_states``, ``n_actions`` and ``feasible`` and implement
    :meth:`step`.  :meth:`initial_state` defaults to a uniform draw.
    """

    n_states: int
    n_actions: int
    feasible: tuple

    def step(self, state: int, action: int, rng: np.random.Generator) -> tuple[int, float]:
        raise NotImplementedError

    def initial_state(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.n_states))

    def is_terminal(self, state: int) -> bool:
        return False


class MDPSimulator(Simulator):
    """Draws transitions of a finite MDP by inverse-CDF sampling."""

    def __init__(self, mdp: FiniteMDP, initial=None):
        self.n_states = mdp.n_states
        self.n_actions = mdp.n_actions
        self.feasible = mdp.feasible
        self._initial = initial
        self._next = {}
        for s, a in zip(*np.nonzero(mdp.mask)):
            nxt = np.flatnonzero(mdp.P[s, a])
            cdf = np.cumsum(mdp.P[s, a, nxt])
            cdf[-1] = 1.0
            self._next[int(s), int(a)] = (nxt.tolist(), cdf.tolist(), mdp.R[s, a, nxt].tolist())

    def step(self, state, action, rng):
        nxt, cdf, rew = self._next[state, action]
        if len(nxt) == 1:
            return nxt[0], rew[0]
        u = rng.random()
        k = 0
        while cdf[k] < u:
            k += 1
        return nxt[k], rew[k]

    def initial_state(self, rng):
        if self._initial is None:
            return int(rng.integers(self.n_states))
        return int(self._initial)


# -- step sizes and exploration -------------------------------------------------


@dataclass
class VisitSchedule:
    """Per-pair step ``c / (c + visits(s, a))``; ``constant`` overrides it.

    Visits are counted before the update, so the first update of a pair uses
    step 1 when ``c = 1``.
    """

    c: float = 1.0
    constant: float | None = None

    def __post_init__(self):
        if self.constant is None and not self.c > 0:
            raise ValueError("c must be positive")
        if self.constant is not None and self.constant < 0:
            raise ValueError("constant step must be non-negative")

    def step(self, visits: int) -> float:
        if self.constant is not None:
            return self.constant
        return self.c / (self.c + visits)


@dataclass
class Exploration:
    """Behavior rule: ``"epsilon_greedy"``, ``"softmax"`` or ``"ucb"``.

    ``param`` is epsilon, the temperature tau, or the UCB constant.  It may be
    a callable of the global step ``t`` for decaying schedules.
    """

    kind: str = "epsilon_greedy"
    param: float | Callable[[int], float] = 0.1

    def __post_init__(self):
        if self.kind not in ("epsilon_greedy", "softmax", "ucb"):
            raise ValueError(f"unknown exploration rule {self.kind!r}")

    def value(self, t: int) -> float:
        return self.param(t) if callable(self.param) else self.param


def epsilon_greedy(eps) -> Exploration:
    return Exploration("epsilon_greedy", eps)


def greedy_index(values: Sequence[float]) -> int:
    best = 0
    for i in range(1, len(values)):
        if values[i] > values[best]:
            best = i
    return best


def select_action(explore: Exploration, q_row, feasible: Sequence[int], counts, t: int, rng) -> int:
    """Pick an action of ``feasible`` from the Q-row ``q_row`` (indexed by action).

    Ties go to the lowest action index.  ``counts`` are the per-action visit
    counts at this state (UCB only); ``t`` is the global step.
    """
    vals = [q_row[a] for a in feasible]
    if explore.kind == "epsilon_greedy":
        eps = explore.value(t)
        if eps > 0 and rng.random() < eps:
            return feasible[int(rng.integers(len(feasible)))]
        return feasible[greedy_index(vals)]
    if explore.kind == "softmax":
        tau = explore.value(t)
        if not tau > 0:
            raise ValueError("softmax temperature must be positive")
        z = np.asarray(vals) / tau
        w = np.exp(z - z.max())
        cdf = np.cumsum(w / w.sum())
        k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        return feasible[min(k, len(feasible) - 1)]
    # ucb: untried actions first, lowest index
    c = explore.value(t)
    for a in feasible:
        if counts[a] == 0:
            return a
    logt = math.log(max(t, 1))
    scores = [q_row[a] + c * math.sqrt(logt / counts[a]) for a in feasible]
    return feasible[greedy_index(scores)]


# -- learners --------------------------------------------------------------------


@dataclass
class RunStats:
    steps: int
    episodes: int
    visits: np.ndarray
    initial_residual: float | None = None
    final_residual: float | None = None
    history: list = field(default_factory=list)


def _budget(steps, episodes, steps_per_episode):
    if episodes is None:
        if steps is None or steps < 0:
            raise ValueError("give either steps or episodes and steps_per_episode")
        return 1, steps
    if steps_per_episode is None or episodes < 0 or steps_per_episode < 0:
        raise ValueError("episodic budget needs episodes and steps_per_episode")
    return episodes, steps_per_episode


def _check_discount(discount):
    if not 0 <= discount < 1:
        raise ValueError(f"discount must lie in [0, 1), got {discount}")


def _check_rules(schedule, explore):
    # the learner never picks its own behaviour policy: both rules come from the caller
    if not isinstance(schedule, VisitSchedule):
        raise ValueError("a VisitSchedule is required")
    if not isinstance(explore, Exploration):
        raise ValueError("an exploration policy is required")


def _init_q(sim: Simulator, init: float):
    q = np.full((sim.n_states, sim.n_actions), -np.inf)
    for s, acts in enumerate(sim.feasible):
        q[s, list(acts)] = init
    return q


def q_learning(
    sim: Simulator,
    discount: float,
    schedule: VisitSchedule,
    explore: Exploration,
    *,
    steps: int | None = None,
    episodes: int | None = None,
    steps_per_episode: int | None = None,
    rng=None,
    q_init: float = 0.0,
    record_every: int = 0,
) -> tuple[np.ndarray, RunStats]:
    """Asynchronous Q-learning.

    Each step updates only the visited pair:
    ``Q(s,a) += g * (R + beta * max_a' Q(s',a') - Q(s,a))`` with
    ``g = schedule.step(visits(s,a))``.  In episodic mode the state is redrawn
    from ``sim.initial_state`` at the start of every episode while Q is kept.
    Infeasible entries of the returned table are ``-inf``.
    """
    return _td_learn(sim, discount, schedule, explore, steps, episodes, steps_per_episode,
                     rng, q_init, record_every, sarsa=False)


def sarsa(
    sim: Simulator,
    discount: float,
    schedule: VisitSchedule,
    explore: Exploration,
    *,
    steps: int | None = None,
    episodes: int | None = None,
    steps_per_episode: int | None = None,
    rng=None,
    q_init: float = 0.0,
    record_every: int = 0,
) -> tuple[np.ndarray, RunStats]:
    """On-policy SARSA: bootstraps on the next action actually selected."""
    return _td_learn(sim, discount, schedule, explore, steps, episodes, steps_per_episode,
                     rng, q_init, record_every, sarsa=True)


def _td_learn(sim, discount, schedule, explore, steps, episodes, steps_per_episode,
              rng, q_init, record_every, sarsa):
    _check_discount(discount)
    _check_rules(schedule, explore)
    rng = np.random.default_rng(rng)
    n_ep, n_steps = _budget(steps, episodes, steps_per_episode)
    q = _init_q(sim, q_init)
    rows = q.tolist()  # python floats are much faster per element
    visits = [[0] * sim.n_actions for _ in range(sim.n_states)]
    feasible = [list(f) for f in sim.feasible]
    history = []
    t = 0
    for _ in range(n_ep):
        s = sim.initial_state(rng)
        a = select_action(explore, rows[s], feasible[s], visits[s], t, rng) if sarsa else None
        for _ in range(n_steps):
            if not sarsa:
                a = select_action(explore, rows[s], feasible[s], visits[s], t, rng)
            s2, r = sim.step(s, a, rng)
            if sarsa:
                a2 = select_action(explore, rows[s2], feasible[s2], visits[s2], t + 1, rng)
                boot = rows[s2][a2]
            else:
                boot = max(rows[s2][b] for b in feasible[s2])
            g = schedule.step(visits[s][a])
            visits[s][a] += 1
            old = rows[s][a]
            new = old + g * (r + discount * boot - old)
            if not math.isfinite(new):
                raise DivergenceError(f"Q({s},{a}) became {new} at step {t}")
            rows[s][a] = new
            t += 1
            if record_every and t % record_every == 0:
                history.append((t, np.array(rows)))
            if sarsa:
                a = a2
            s = s2
            if sim.is_terminal(s):
                break
    q = np.array(rows)
    stats = RunStats(t, n_ep, np.array(visits), history=history)
    return q, stats


@dataclass
class LinearQ:
    theta: np.ndarray
    target: np.ndarray
    features: Callable[[int, int], np.ndarray]

    def value(self, s: int, a: int, target: bool = False) -> float:
        w = self.target if target else self.theta
        return float(w @ self.features(s, a))

    def table(self, n_states: int, feasible) -> np.ndarray:
        n_actions = 1 + max(max(f) for f in feasible)
        q = np.full((n_states, n_actions), -np.inf)
        for s, acts in enumerate(feasible):
            for a in acts:
                q[s, a] = self.value(s, a)
        return q


def q_learning_linear(
    sim: Simulator,
    features: Callable[[int, int], np.ndarray],
    discount: float,
    schedule: VisitSchedule,
    explore: Exploration,
    refresh: int = 1,
    *,
    theta0=None,
    steps: int | None = None,
    episodes: int | None = None,
    steps_per_episode: int | None = None,
    rng=None,
    max_norm: float = 1e12,
) -> tuple[LinearQ, RunStats]:
    """Q-learning with ``Q(s,a) = theta @ phi(s,a)`` and a target copy.

    ``delta = R + beta * max_a' theta_minus @ phi(s',a') - theta @ phi(s,a)``,
    ``theta += g * delta * phi(s,a)``, and ``theta_minus`` is reset to
    ``theta`` every ``refresh`` steps.  The step ``g`` uses the visit count of
    ``(s, a)`` as in :func:`q_learning`.  Actions are chosen from the current
    ``theta``.
    """
    _check_discount(discount)
    if refresh < 1:
        raise ValueError("refresh period must be >= 1")
    _check_rules(schedule, explore)
    rng = np.random.default_rng(rng)
    n_ep, n_steps = _budget(steps, episodes, steps_per_episode)
    feasible = [list(f) for f in sim.feasible]
    phi = {(s, a): np.asarray(features(s, a), dtype=float)
           for s in range(sim.n_states) for a in feasible[s]}
    dim = next(iter(phi.values())).size
    theta = np.zeros(dim) if theta0 is None else np.array(theta0, dtype=float)
    target = theta.copy()
    visits = [[0] * sim.n_actions for _ in range(sim.n_states)]

    def row(s, w):
        r = [-np.inf] * sim.n_actions
        for a in feasible[s]:
            r[a] = float(w @ phi[s, a])
        return r

    t = 0
    for _ in range(n_ep):
        s = sim.initial_state(rng)
        for _ in range(n_steps):
            a = select_action(explore, row(s, theta), feasible[s], visits[s], t, rng)
            s2, r = sim.step(s, a, rng)
            boot = max(float(target @ phi[s2, b]) for b in feasible[s2])
            g = schedule.step(visits[s][a])
            visits[s][a] += 1
            f = phi[s, a]
            old = float(theta @ f)
            theta = theta + g * ((r + discount * boot) - old) * f
            if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > max_norm:
                raise DivergenceError(f"theta diverged at step {t}")
            t += 1
            if t % refresh == 0:
                target = theta.copy()
            s = s2
            if sim.is_terminal(s):
                break
    return LinearQ(theta, target, features), RunStats(t, n_ep, np.array(visits))


def one_hot_features(n_states: int, n_actions: int):
    """Tabular features ``phi(s,a) = e_{s * n_actions + a}``."""
    def phi(s, a):
        v = np.zeros(n_states * n_actions)
        v[s * n_actions + a] = 1.0
        return v
    return phi


def greedy_from_q(q: np.ndarray) -> np.ndarray:
    """Greedy policy of a Q-table (``-inf`` marks infeasible); lowest index on ties."""
    return np.argmax(q, axis=1)


def rollout(sim: Simulator, policy, start: int, steps: int, rng=None, stop=None):
    """Follow a deterministic policy; returns the visited states (including ``start``)."""
    rng = np.random.default_rng(rng)
    path = [int(start)]
    s = int(start)
    for _ in range(steps):
        if stop is not None and stop(s):
            break
        s, _ = sim.step(s, int(policy[s]), rng)
        path.append(s)
    return path
