"""Stochastic iterative methods ``x_{t+1} = x_t + gamma_t Y_t``: step-size
schedules, noisy gradient descent, stochastic approximation of a mean and
mini-batch SGD for least squares."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

DIVERGENCE_NORM = 1e12


class DivergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class StepSchedule:
    """``constant``: ``gamma``; ``harmonic``: ``scale * c / (c + t)``;
    ``power``: ``c / (t + 1) ** p``.  The step index ``t`` starts at 0."""

    rule: str
    gamma: float = 0.0
    c: float = 1.0
    p: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.rule not in ("constant", "harmonic", "power"):
            raise ValueError(f"unknown schedule rule {self.rule!r}")
        if self.rule == "constant" and self.gamma < 0:
            raise ValueError("constant step must be >= 0")
        if self.rule in ("harmonic", "power") and not self.c > 0:
            raise ValueError("c must be > 0")
        if self.rule == "power" and self.p < 0:
            raise ValueError("p must be >= 0")
        if self.rule == "harmonic" and self.scale < 0:
            raise ValueError("scale must be >= 0")

    @classmethod
    def constant(cls, gamma: float) -> "StepSchedule":
        return cls("constant", gamma=gamma)

    @classmethod
    def harmonic(cls, c: float = 1.0, scale: float = 1.0) -> "StepSchedule":
        return cls("harmonic", c=c, scale=scale)

    @classmethod
    def power(cls, c: float = 1.0, p: float = 1.0) -> "StepSchedule":
        return cls("power", c=c, p=p)

    @classmethod
    def parse(cls, text: str) -> "StepSchedule":
        """``"constant:0.1"``, ``"harmonic:c[:scale]"`` or ``"power:c:p"``."""
        name, *args = text.split(":")
        vals = [float(a) for a in args]
        if name == "constant":
            return cls.constant(*vals)
        if name == "harmonic":
            return cls.harmonic(*vals)
        if name == "power":
            return cls.power(*vals)
        raise ValueError(f"unknown schedule {text!r}")

    def __call__(self, t: int) -> float:
        if self.rule == "constant":
            return self.gamma
        if self.rule == "harmonic":
            return self.scale * self.c / (self.c + t)
        return self.c / (t + 1) ** self.p

    def array(self, T: int, t0: int = 0) -> np.ndarray:
        t = np.arange(t0, t0 + T, dtype=float)
        if self.rule == "constant":
            return np.full(T, self.gamma)
        if self.rule == "harmonic":
            return self.scale * self.c / (self.c + t)
        return self.c / (t + 1) ** self.p

    def describe(self) -> str:
        if self.rule == "constant":
            return f"constant:{self.gamma!r}"
        if self.rule == "harmonic":
            return f"harmonic:{self.c!r}:{self.scale!r}"
        return f"power:{self.c!r}:{self.p!r}"


@dataclass(frozen=True)
class RobbinsMonroReport:
    sum_gamma: float
    sum_gamma_sq: float
    divergent_sum: bool
    square_summable: bool

    @property
    def satisfied(self) -> bool:
        return self.divergent_sum and self.square_summable


def robbins_monro_check(schedule: StepSchedule, horizon: int) -> RobbinsMonroReport:
    """Partial sums over ``t = 0..horizon`` and the analytic verdict on
    ``sum gamma = inf`` and ``sum gamma^2 < inf``."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    g = schedule.array(horizon + 1)
    if schedule.rule == "constant":
        div, sq = schedule.gamma > 0, schedule.gamma == 0
    elif schedule.rule == "harmonic":
        div, sq = schedule.scale > 0, True
    else:
        div, sq = schedule.p <= 1, schedule.p > 0.5
    return RobbinsMonroReport(float(g.sum()), float((g ** 2).sum()), bool(div), bool(sq))


@dataclass
class IterTrajectory:
    x: np.ndarray              # (T + 1, d)
    f: np.ndarray              # (T + 1,) objective values, nan when not supplied
    grad_norm: np.ndarray      # (T + 1,)
    gamma: np.ndarray          # (T,)
    y_sq: np.ndarray = field(default_factory=lambda: np.zeros(0))  # ||Y_t||^2, (T,)

    @property
    def steps(self) -> int:
        return self.gamma.size


def _guard(x, t):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_NORM:
        raise DivergenceError(f"iterate left the finite range at step {t}: {x}")


def noisy_gradient_descent(grad: Callable, noise: Callable, x0, schedule: StepSchedule,
                           steps: int, rng=None, f: Callable | None = None) -> IterTrajectory:
    """``x_{t+1} = x_t - gamma_t (grad(x_t) + Z_t)`` with ``Z_t = noise(rng)``."""
    rng = np.random.default_rng(rng)
    x = np.array(x0, dtype=float)
    gam = schedule.array(steps)
    xs = np.empty((steps + 1, x.size))
    gn = np.empty(steps + 1)
    ysq = np.empty(steps)
    xs[0] = x
    for t in range(steps):
        g = np.asarray(grad(x), dtype=float)
        y = -(g + np.asarray(noise(rng), dtype=float))
        gn[t] = np.sqrt(g @ g)
        ysq[t] = y @ y
        x = x + gam[t] * y
        _guard(x, t)
        xs[t + 1] = x
    g = np.asarray(grad(x), dtype=float)
    gn[steps] = np.sqrt(g @ g)
    fv = np.array([f(v) for v in xs]) if f is not None else np.full(steps + 1, np.nan)
    return IterTrajectory(xs, fv, gn, gam, ysq)


def fit_mean_square(traj: IterTrajectory) -> tuple[float, float]:
    """Constants with ``||Y_t||^2 <= K1 + K2 ||grad f(x_t)||^2`` on the run.

    ``K2`` is the least-squares slope (clipped at 0) and ``K1`` the smallest
    intercept that makes the inequality hold at every recorded step.
    """
    g2 = traj.grad_norm[:-1] ** 2
    y2 = traj.y_sq
    if np.ptp(g2) > 0:
        k2 = max(0.0, float(np.polyfit(g2, y2, 1)[0]))
    else:
        k2 = 0.0
    k1 = float(np.max(y2 - k2 * g2))
    return max(k1, 0.0), k2


def stochastic_approximation_mean(samples: Iterable, x0, schedule: StepSchedule,
                                  t0: int = 0) -> np.ndarray:
    """``x_{t+1} = (1 - gamma_t) x_t + gamma_t V_t``; returns ``x_0..x_T``.

    The first update uses ``gamma_{t0}``.  With the harmonic schedule
    ``1 / (1 + t)``: ``t0 = 0`` gives the running mean of the samples, and
    ``t0 = 1`` gives ``(x_0 + V_0 + ... + V_{T-1}) / (T + 1)``.
    """
    x = np.array(x0, dtype=float)
    out = [x.copy()]
    for k, v in enumerate(samples):
        g = schedule(t0 + k)
        x = (1 - g) * x + g * np.asarray(v, dtype=float)
        _guard(x, k)
        out.append(x.copy())
    return np.array(out)


def synthetic_least_squares(n: int = 1000, d: int = 2, theta=(2.0, -3.5), seed: int = 0):
    """``X ~ N(0, I)``, ``y = X theta + N(0, 1)`` drawn from the legacy global-style
    generator seeded with ``seed``."""
    rs = np.random.RandomState(seed)
    X = rs.randn(n, d)
    y = X @ np.asarray(theta, dtype=float) + rs.randn(n)
    return X, y


def least_squares_loss(theta, X, y) -> float:
    r = y - X @ theta
    return float(r @ r / len(y))


def normal_equations(X, y) -> np.ndarray:
    return np.linalg.solve(X.T @ X, X.T @ y)


@dataclass
class SGDTrajectory:
    theta: np.ndarray   # (T + 1, d)
    loss: np.ndarray    # (T + 1,) full-data loss
    gamma: np.ndarray   # (T,)


def sgd_least_squares(X, y, theta0, schedule: StepSchedule, batch_size: int = 1,
                      steps: int = 1000, rng=None, record_loss: bool = True) -> SGDTrajectory:
    """Mini-batch SGD on ``f(theta) = mean((y - X theta)^2)``.

    Each step draws ``batch_size`` distinct indices uniformly and moves along
    the average per-sample gradient ``-2 x (y - x @ theta)``.  With
    ``batch_size = N`` every step is an exact gradient step on ``f``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must lie in [1, {n}]")
    rng = np.random.default_rng(rng)
    theta = np.array(theta0, dtype=float)
    gam = schedule.array(steps)
    thetas = np.empty((steps + 1, theta.size))
    thetas[0] = theta
    full = np.arange(n)
    for t in range(steps):
        if batch_size == n:
            idx = full
        elif batch_size == 1:
            idx = rng.integers(n, size=1)
        else:
            idx = rng.choice(n, size=batch_size, replace=False)
        Xb, yb = X[idx], y[idx]
        g = -2.0 * Xb.T @ (yb - Xb @ theta) / batch_size
        theta = theta - gam[t] * g
        _guard(theta, t)
        thetas[t + 1] = theta
    if record_loss:
        res = y[None, :] - thetas @ X.T
        loss = np.mean(res ** 2, axis=1)
    else:
        loss = np.full(steps + 1, np.nan)
    return SGDTrajectory(thetas, loss, gam)
