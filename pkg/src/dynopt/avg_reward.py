"""Average-reward analysis of ergodic policies and policy-gradient methods.

Everything exact here works on the chain ``K_pi(s, s') = sum_a pi(s,a) p(s,a,s')``
and raises :class:`NotErgodicError` when that chain is not irreducible and
aperiodic.  Differential values are normalized by ``h(s0) = 0``.  Q-tables
and advantages hold 0 at infeasible pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mdp import FiniteMDP, MDPValidationError, as_stochastic, policy_matrix, policy_reward
from .rl import Simulator


class NotErgodicError(ArithmeticError):
    """The chain induced by a policy is reducible or periodic."""


# -- chains ------------------------------------------------------------------------


def _check_kernel(K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise MDPValidationError(f"kernel must be square, got shape {K.shape}")
    if np.any(K < 0) or np.any(np.abs(K.sum(axis=1) - 1) > 1e-12):
        raise MDPValidationError("kernel rows must be probability vectors")
    return K


def ergodicity_check(K) -> bool:
    """True iff ``K`` is primitive: some power is entrywise positive.

    A nonnegative ``n x n`` matrix is primitive iff its power
    ``(n - 1)^2 + 1`` is positive, which is computed on the 0/1 pattern by
    repeated squaring.
    """
    K = _check_kernel(K)
    B = (K > 0).astype(float)
    if B.all():
        return True
    n = B.shape[0]
    e = (n - 1) ** 2 + 1
    result = None
    base = B
    while e:
        if e & 1:
            result = base if result is None else ((result @ base) > 0).astype(float)
        e >>= 1
        if e:
            base = ((base @ base) > 0).astype(float)
    return bool(result.all())


def stationary_distribution(K, check: bool = True) -> np.ndarray:
    """Invariant distribution of an ergodic kernel.

    Solves ``lambda (K - I) = 0`` with the last equation replaced by
    ``sum(lambda) = 1``.
    """
    K = _check_kernel(K)
    if check and not ergodicity_check(K):
        raise NotErgodicError("kernel is not irreducible and aperiodic")
    n = K.shape[0]
    M = K.T - np.eye(n)
    M[-1] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    lam = np.linalg.solve(M, b)
    return np.maximum(lam, 0.0) / np.maximum(lam, 0.0).sum()


def policy_kernel(mdp: FiniteMDP, policy) -> np.ndarray:
    return policy_matrix(mdp, policy)


def average_reward(mdp: FiniteMDP, policy) -> float:
    """``rho = sum_s lambda(s) sum_a pi(s,a) sum_s' p(s,a,s') R(s,a,s')``."""
    pi = as_stochastic(mdp, policy)
    lam = stationary_distribution(policy_kernel(mdp, pi))
    return float(lam @ policy_reward(mdp, pi))


@dataclass(frozen=True)
class AvgRewardSolution:
    rho: float
    lam: np.ndarray
    h: np.ndarray
    q: np.ndarray
    advantage: np.ndarray
    policy: np.ndarray
    reference_state: int = 0


def _solve(P, r, mask, pi, s0, check=True):
    K = np.einsum("sa,sak->sk", pi, P)
    if check and not ergodicity_check(K):
        raise NotErgodicError("policy induces a chain that is not irreducible and aperiodic")
    n = K.shape[0]
    lam = stationary_distribution(K, check=False)
    r_pi = np.einsum("sa,sa->s", pi, r)
    rho = float(lam @ r_pi)
    M = np.eye(n) - K
    b = r_pi - rho
    M[s0] = 0.0
    M[s0, s0] = 1.0
    b[s0] = 0.0
    h = np.linalg.solve(M, b)
    h[s0] = 0.0
    q = np.where(mask, r - rho + P @ h, 0.0)
    adv = np.where(mask, q - h[:, None], 0.0)
    return rho, lam, h, q, adv


def differential_values(mdp: FiniteMDP, policy, reference_state: int = 0) -> AvgRewardSolution:
    """Solve ``(I - K_pi) h = r_pi - rho`` with ``h(s0) = 0``, then
    ``Q(s,a) = r(s,a) - rho + sum_s' p(s,a,s') h(s')`` and ``A = Q - h``."""
    pi = as_stochastic(mdp, policy)
    if not 0 <= reference_state < mdp.n_states:
        raise MDPValidationError("reference state out of range")
    rho, lam, h, q, adv = _solve(mdp.P, mdp.r, mdp.mask, pi, reference_state)
    return AvgRewardSolution(rho, lam, h, q, adv, pi, reference_state)


def poisson_residual(mdp: FiniteMDP, sol: AvgRewardSolution) -> float:
    """``max_s |h(s) + rho - r_pi(s) - (K_pi h)(s)|``."""
    K = policy_kernel(mdp, sol.policy)
    return float(np.max(np.abs(sol.h + sol.rho - policy_reward(mdp, sol.policy) - K @ sol.h)))


def bellman_avg_residual(mdp: FiniteMDP, rho: float, h) -> float:
    """``max_s |h(s) - max_a (r(s,a) - rho + sum_s' p h(s'))|``."""
    q = np.where(mdp.mask, mdp.r - rho + mdp.P @ np.asarray(h), -np.inf)
    return float(np.max(np.abs(np.asarray(h) - q.max(axis=1))))


def policy_gradient_exact(mdp: FiniteMDP, policy) -> np.ndarray:
    """Gradient of ``rho`` in the direct tabular parameterization:
    ``g(s,a) = lambda(s) Q(s,a)`` on feasible pairs, 0 elsewhere.

    Only its inner products with directions that keep every row summing to
    one are meaningful (``Q`` is defined up to a per-state constant shift in
    that sense).
    """
    sol = differential_values(mdp, policy)
    return sol.lam[:, None] * sol.q


def performance_difference(mdp: FiniteMDP, pi, pi_new) -> tuple[float, float]:
    """``(rho(pi') - rho(pi), sum_s lambda'(s) sum_a pi'(s,a) A_pi(s,a))``."""
    sol = differential_values(mdp, pi)
    new = differential_values(mdp, pi_new)
    rhs = float(np.sum(new.lam[:, None] * new.policy * sol.advantage))
    return new.rho - sol.rho, rhs


# -- projection and projected gradient ------------------------------------------------


def project_simplex(v) -> np.ndarray:
    """Euclidean projection of a vector onto the probability simplex (sort and threshold)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def simplex_project(Y, mask=None) -> np.ndarray:
    """Project every row of ``Y`` onto the simplex over its feasible entries.

    Infeasible entries (``mask`` False) are set to 0.
    """
    Y = np.asarray(Y, dtype=float)
    if mask is None:
        mask = np.ones(Y.shape, dtype=bool)
    out = np.zeros_like(Y)
    for s in range(Y.shape[0]):
        idx = np.flatnonzero(mask[s])
        out[s, idx] = project_simplex(Y[s, idx])
    return out


@dataclass
class PGResult:
    policy: np.ndarray
    rho: np.ndarray              # rho of every iterate, starting with pi_0
    iterations: int
    converged: bool
    lam_ratio: float             # max over iterates and states of lambda_k(s) / lambda_final(s)
    trajectory: list = field(default_factory=list, repr=False)


def projected_policy_gradient(mdp: FiniteMDP, pi0, alpha: float = 0.01, iters: int = 10_000,
                              tol: float = 1e-10, keep_trajectory: bool = False) -> PGResult:
    """``pi_{k+1} = Proj(pi_k + alpha * lambda_k Q_k)`` row by row.

    Stops after ``iters`` steps or once ``max |pi_{k+1} - pi_k| <= tol``.
    Every iterate is checked for ergodicity.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    pi = as_stochastic(mdp, pi0)
    P, r, mask = mdp.P, mdp.r, mdp.mask
    rho, lam, *_ , q, _ = _solve(P, r, mask, pi, 0)
    rhos = [rho]
    lams = [lam]
    traj = [pi.copy()] if keep_trajectory else []
    converged = False
    k = 0
    for k in range(1, iters + 1):
        new = simplex_project(pi + alpha * lam[:, None] * q, mask)
        step = float(np.max(np.abs(new - pi)))
        pi = new
        try:
            rho, lam, _, q, _ = _solve(P, r, mask, pi, 0)
        except NotErgodicError as exc:
            raise NotErgodicError(f"iterate {k} left the ergodic class") from exc
        rhos.append(rho)
        lams.append(lam)
        if keep_trajectory:
            traj.append(pi.copy())
        if step <= tol:
            converged = True
            break
    lam_arr = np.array(lams)
    ratio = float(np.max(lam_arr / np.maximum(lam_arr[-1], 1e-300)))
    return PGResult(pi, np.array(rhos), k, converged, ratio, traj)


def lipschitz_estimate(mdp: FiniteMDP, n_pairs: int = 50, rng=None, radius: float = 0.05) -> float:
    """Empirical Lipschitz constant of the exact gradient between nearby
    strictly positive random policies; ``1 / L`` is a safe-looking step."""
    rng = np.random.default_rng(rng)
    best = 0.0
    for _ in range(n_pairs):
        base = rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states) * mdp.mask
        base /= base.sum(axis=1, keepdims=True)
        other = simplex_project(base + radius * rng.normal(size=base.shape) * mdp.mask, mdp.mask)
        try:
            g1 = policy_gradient_exact(mdp, base)
            g2 = policy_gradient_exact(mdp, other)
        except NotErgodicError:
            continue
        # compare gradients after removing the per-state mean (the meaningful part)
        d1 = _center(g1, mdp.mask)
        d2 = _center(g2, mdp.mask)
        dist = np.linalg.norm(base - other)
        if dist > 0:
            best = max(best, float(np.linalg.norm(d1 - d2) / dist))
    return best


def _center(g, mask):
    cnt = mask.sum(axis=1, keepdims=True)
    mean = np.where(mask, g, 0).sum(axis=1, keepdims=True) / cnt
    return np.where(mask, g - mean, 0.0)


def directional_derivative(mdp: FiniteMDP, policy, direction) -> float:
    """``sum_{s,a} g(s,a) d(s,a)`` for a direction whose rows sum to zero."""
    d = np.asarray(direction, dtype=float)
    if np.any(np.abs(d.sum(axis=1)) > 1e-12) or np.any(d[~mdp.mask] != 0):
        raise MDPValidationError("direction rows must sum to 0 and vanish off the feasible set")
    return float(np.sum(policy_gradient_exact(mdp, policy) * d))


# -- softmax policies and simulation-based estimators ----------------------------------


class SoftmaxPolicy:
    """``pi_theta(s,a) = exp(theta . phi(s,a)) / sum_b exp(theta . phi(s,b))`` over feasible ``b``.

    ``features`` has shape ``(S, A, k)``; rows of infeasible actions are ignored.
    """

    def __init__(self, features, mask):
        self.features = np.asarray(features, dtype=float)
        self.mask = np.asarray(mask, dtype=bool)
        if self.features.shape[:2] != self.mask.shape:
            raise MDPValidationError("features must have shape (S, A, k)")
        self.dim = self.features.shape[2]

    @classmethod
    def tabular(cls, mask) -> "SoftmaxPolicy":
        S, A = np.asarray(mask).shape
        feats = np.eye(S * A).reshape(S, A, S * A)
        return cls(feats, mask)

    def probs(self, theta) -> np.ndarray:
        z = np.where(self.mask, self.features @ np.asarray(theta, dtype=float), -np.inf)
        z = z - z.max(axis=1, keepdims=True)
        w = np.exp(z)
        return w / w.sum(axis=1, keepdims=True)

    def row_probs(self, theta, s: int) -> np.ndarray:
        z = self.features[s] @ theta
        z = np.where(self.mask[s], z - z[self.mask[s]].max(), -np.inf)
        w = np.exp(z)
        return w / w.sum()

    def grad_log(self, theta, s: int, a: int, probs=None) -> np.ndarray:
        """``phi(s,a) - sum_b pi(s,b) phi(s,b)``."""
        p = self.probs(theta)[s] if probs is None else probs
        return self.features[s, a] - p @ self.features[s]

    def jacobian(self, theta) -> np.ndarray:
        """``d pi(s,a) / d theta`` with shape ``(S, A, k)``."""
        pi = self.probs(theta)
        mean = np.einsum("sa,sak->sk", pi, self.features)
        return pi[:, :, None] * (self.features - mean[:, None, :])


def softmax_gradient_exact(mdp: FiniteMDP, policy: SoftmaxPolicy, theta) -> np.ndarray:
    """``d rho / d theta = sum_{s,a} lambda(s) Q(s,a) d pi(s,a) / d theta``."""
    sol = differential_values(mdp, policy.probs(theta))
    g = sol.lam[:, None] * sol.q
    return np.einsum("sa,sak->k", g, policy.jacobian(theta))


def _sample(cdf_row, rng):
    u = rng.random()
    k = 0
    while k < len(cdf_row) - 1 and cdf_row[k] < u:
        k += 1
    return k


def _policy_cdfs(probs):
    cdfs = np.cumsum(probs, axis=1)
    cdfs[:, -1] = 1.0
    return cdfs.tolist()


def simulate_policy(sim: Simulator, probs, steps: int, rng, start=None):
    """Run ``steps`` transitions under a stochastic policy.

    Returns ``(states, actions, rewards)`` where ``rewards[t]`` is the reward
    of the transition out of ``states[t]``.
    """
    cdfs = _policy_cdfs(probs)
    s = sim.initial_state(rng) if start is None else int(start)
    states, actions, rewards = [], [], []
    for _ in range(steps):
        a = _sample(cdfs[s], rng)
        s2, r = sim.step(s, a, rng)
        states.append(s)
        actions.append(a)
        rewards.append(r)
        s = s2
    return states, actions, rewards


def reinforce_gradient_estimate(sim: Simulator, policy: SoftmaxPolicy, theta, horizon: int = 500,
                                rng=None, baseline=None, rho_bar: float | str = "independent",
                                normalize: bool = True) -> np.ndarray:
    """One-trajectory estimate ``sum_{t=0}^{H} grad log pi(s_t, a_t) (G_t - b(s_t))``.

    ``G_{H+1} = 0`` and ``G_t = R_t + G_{t+1} - rho_bar``.  ``rho_bar`` is

    * ``"independent"`` (default): the mean reward of a separate pilot
      trajectory of ``H`` steps, so that it does not depend on the actions of
      the scored trajectory;
    * ``"same"``: ``sum_{k=1}^{H} R_k / H`` from the scored trajectory itself,
      which correlates with the scored actions and shrinks the estimate;
    * a number, used as is.

    With ``normalize`` the sum is divided by ``H + 1`` so that it estimates
    the gradient of the average reward rather than ``H + 1`` times it.
    """
    rng = np.random.default_rng(rng)
    theta = np.asarray(theta, dtype=float)
    probs = policy.probs(theta)
    if isinstance(rho_bar, str) and rho_bar == "independent":
        _, _, pilot = simulate_policy(sim, probs, horizon, rng)
        rb = float(np.mean(pilot))
    states, actions, rewards = simulate_policy(sim, probs, horizon + 1, rng)
    if isinstance(rho_bar, str):
        if rho_bar == "same":
            rb = float(np.sum(rewards[1:]) / horizon)
        elif rho_bar != "independent":
            raise ValueError(f"unknown rho_bar mode {rho_bar!r}")
    else:
        rb = float(rho_bar)
    feats = policy.features
    mean_feat = np.einsum("sa,sak->sk", probs, feats)
    G = 0.0
    est = np.zeros(policy.dim)
    for t in range(horizon, -1, -1):
        G = rewards[t] + G - rb
        s, a = states[t], actions[t]
        b = 0.0 if baseline is None else float(baseline[s])
        est += (feats[s, a] - mean_feat[s]) * (G - b)
    if not np.all(np.isfinite(est)):
        raise ArithmeticError("non-finite gradient estimate")
    return est / (horizon + 1) if normalize else est


@dataclass
class ActorCriticResult:
    theta: np.ndarray
    w: np.ndarray
    rho: np.ndarray    # rho_0 .. rho_T


def _as_schedule(x) -> Callable[[int], float]:
    if callable(x):
        return x
    val = float(x)
    return lambda t: val


def actor_critic(sim: Simulator, policy: SoftmaxPolicy, q_features, theta0, w0,
                 gamma, alpha, eps, steps: int, rng=None, start=None,
                 max_norm: float = 1e12) -> ActorCriticResult:
    """Q-function actor-critic for the average-reward criterion.

    Per step: draw ``a_t ~ pi_theta(s_t)``, observe ``(s_{t+1}, R_{t+1})``, draw
    ``a'_t ~ pi_theta(s_{t+1})``, then with
    ``delta = R - rho + Q(s_{t+1}, a'_t; w) - Q(s_t, a_t; w)`` update
    ``w += gamma_t delta phi(s_t, a_t)``,
    ``theta += alpha_t grad log pi(s_t, a_t) Q(s_t, a_t; w)`` (old ``w``) and
    ``rho = (1 - eps_t) rho + eps_t R``.  ``q_features`` has shape ``(S, A, m)``
    and ``Q(s, a; w) = w . q_features[s, a]``.  Schedules are numbers or
    callables of ``t``.
    """
    rng = np.random.default_rng(rng)
    gamma, alpha, eps = _as_schedule(gamma), _as_schedule(alpha), _as_schedule(eps)
    qf = np.asarray(q_features, dtype=float)
    theta = np.array(theta0, dtype=float)
    w = np.array(w0, dtype=float)
    rho = 0.0
    rhos = np.empty(steps + 1)
    rhos[0] = rho
    s = sim.initial_state(rng) if start is None else int(start)
    feats = policy.features
    for t in range(steps):
        ps = policy.row_probs(theta, s)
        a = _sample(np.cumsum(ps), rng)
        s2, r = sim.step(s, a, rng)
        a2 = _sample(np.cumsum(policy.row_probs(theta, s2)), rng)
        q_sa = float(w @ qf[s, a])
        delta = r - rho + float(w @ qf[s2, a2]) - q_sa
        w = w + gamma(t) * delta * qf[s, a]
        theta = theta + alpha(t) * (feats[s, a] - ps @ feats[s]) * q_sa
        rho = (1 - eps(t)) * rho + eps(t) * r
        if not (abs(w).max(initial=0) <= max_norm and abs(theta).max(initial=0) <= max_norm):
            raise ArithmeticError(f"actor-critic diverged at step {t}")
        rhos[t + 1] = rho
        s = s2
    return ActorCriticResult(theta, w, rhos)


# -- enumeration helper -----------------------------------------------------------------


def best_deterministic_rho(mdp: FiniteMDP) -> tuple[float, np.ndarray]:
    """Largest average reward over ergodic deterministic policies (brute force)."""
    import itertools

    best, arg = -np.inf, None
    for acts in itertools.product(*mdp.feasible):
        try:
            rho = average_reward(mdp, np.array(acts))
        except NotErgodicError:
            continue
        if rho > best:
            best, arg = rho, np.array(acts)
    if arg is None:
        raise NotErgodicError("no deterministic policy is ergodic")
    return best, arg
