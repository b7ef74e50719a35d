import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynopt.stochastic import (
    DivergenceError,
    StepSchedule,
    fit_mean_square,
    least_squares_loss,
    noisy_gradient_descent,
    normal_equations,
    robbins_monro_check,
    sgd_least_squares,
    stochastic_approximation_mean,
    synthetic_least_squares,
)

MU = np.array([1.0, -2.0])


def grad(x):
    return x - MU


def quad(x):
    return 0.5 * float((x - MU) @ (x - MU))


def uniform_noise(rng):
    return rng.uniform(-1, 1, size=2)


def test_schedules_and_parse():
    assert StepSchedule.parse("constant:0.1")(7) == 0.1
    h = StepSchedule.parse("harmonic:1")
    assert [h(t) for t in range(3)] == [1.0, 0.5, 1 / 3]
    assert StepSchedule.parse("harmonic:50:0.05")(0) == pytest.approx(0.05)
    assert StepSchedule.parse("power:1:0.5")(3) == pytest.approx(0.5)
    np.testing.assert_allclose(h.array(4, t0=1), [0.5, 1 / 3, 0.25, 0.2])
    for bad in ["linear:1", "harmonic:0", "constant:-1"]:
        with pytest.raises(ValueError):
            StepSchedule.parse(bad)


@pytest.mark.parametrize("schedule, verdict", [
    (StepSchedule.harmonic(1.0), True),
    (StepSchedule.power(1.0, 0.7), True),
    (StepSchedule.power(1.0, 0.5), False),
    (StepSchedule.power(1.0, 2.0), False),
    (StepSchedule.constant(0.1), False),
    (StepSchedule.constant(0.0), False),
])
def test_robbins_monro_verdicts(schedule, verdict):
    rep = robbins_monro_check(schedule, 1000)
    assert rep.satisfied is verdict
    assert rep.sum_gamma == pytest.approx(schedule.array(1001).sum())


def test_zero_noise_constant_step_is_gradient_descent():
    traj = noisy_gradient_descent(grad, lambda rng: np.zeros(2), [5.0, 5.0],
                                  StepSchedule.constant(0.1), 300, rng=0, f=quad)
    np.testing.assert_allclose(traj.x[-1], MU, atol=1e-12)
    # closed form for the quadratic: x_t - mu = 0.9^t (x_0 - mu)
    np.testing.assert_allclose(traj.x[10] - MU, 0.9 ** 10 * (np.array([5.0, 5.0]) - MU))


def test_zero_schedule_freezes_iterate():
    traj = noisy_gradient_descent(grad, uniform_noise, [3.0, 4.0], StepSchedule.constant(0.0), 50, rng=1)
    assert np.all(traj.x == [3.0, 4.0])


def test_noisy_gd_harmonic_reaches_mu():
    traj = noisy_gradient_descent(grad, uniform_noise, [0.0, 0.0], StepSchedule.harmonic(1.0), 100_000, rng=0)
    assert np.linalg.norm(traj.x[-1] - MU) <= 0.05


def test_noisy_gd_statistical_acceptance():
    finals = []
    for seed in range(20):
        traj = noisy_gradient_descent(grad, uniform_noise, [4.0, 4.0], StepSchedule.harmonic(1.0),
                                      20_000, rng=seed, f=quad)
        runmin = np.minimum.accumulate(traj.f)
        assert np.all(np.diff(runmin) <= 0)
        finals.append(traj.grad_norm[-1])
    assert np.median(finals) <= 1e-2


def test_mean_square_fit_bounds_every_step():
    traj = noisy_gradient_descent(grad, uniform_noise, [10.0, -10.0], StepSchedule.harmonic(1.0), 2000, rng=3)
    k1, k2 = fit_mean_square(traj)
    g2 = traj.grad_norm[:-1] ** 2
    assert np.all(traj.y_sq <= k1 + k2 * g2 + 1e-9)
    # bounded noise of norm at most sqrt(2): the slope is near 1 and the intercept small
    assert 0.5 < k2 < 1.5 and k1 < 4.0


def test_divergence_guard():
    with pytest.raises(DivergenceError, match="step"):
        noisy_gradient_descent(grad, lambda rng: np.zeros(2), [1e3, 0.0], StepSchedule.constant(5.0), 200)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40), st.floats(-1e3, 1e3))
def test_running_mean_identity(samples, x0):
    h = StepSchedule.harmonic(1.0)
    xs = stochastic_approximation_mean(samples, x0, h)
    # gamma_0 = 1 overwrites x0: running mean of the samples
    for t in range(1, len(samples) + 1):
        assert xs[t] == pytest.approx(np.mean(samples[:t]), abs=1e-12 * (1 + abs(np.mean(samples[:t]))) + 1e-12)
    # shifted by one step, x0 counts as a sample
    ys = stochastic_approximation_mean(samples, x0, h, t0=1)
    T = len(samples)
    ref = (x0 + sum(samples)) / (T + 1)
    assert ys[-1] == pytest.approx(ref, abs=1e-12 * (1 + abs(ref)) + 1e-12)


def test_constant_stream():
    xs = stochastic_approximation_mean([2.5] * 10, 100.0, StepSchedule.harmonic(1.0))
    np.testing.assert_allclose(xs[1:], 2.5, atol=1e-14)


def test_fair_coin_lln():
    rng = np.random.default_rng(0)
    flips = rng.choice([-1.0, 1.0], size=1_000_000)
    # vectorised form of the harmonic recursion; checked against the loop on a prefix
    loop = stochastic_approximation_mean(flips[:1000], 0.0, StepSchedule.harmonic(1.0))
    np.testing.assert_allclose(loop[1:], np.cumsum(flips[:1000]) / np.arange(1, 1001), atol=1e-12)
    assert abs(flips.mean()) <= 0.01


def test_sgd_matches_normal_equations():
    X, y = synthetic_least_squares()
    theta_hat = normal_equations(X, y)
    traj = sgd_least_squares(X, y, [0.0, 0.0], StepSchedule.harmonic(50, 0.05), 1, 20_000, rng=0)
    assert np.linalg.norm(traj.theta[-1] - theta_hat) <= 0.1
    assert traj.loss[-1] == pytest.approx(least_squares_loss(traj.theta[-1], X, y))


def test_full_batch_sgd_is_gradient_descent():
    X, y = synthetic_least_squares(n=50, seed=2)
    traj = sgd_least_squares(X, y, [0.0, 0.0], StepSchedule.constant(0.1), len(y), 30, rng=0)
    theta = np.zeros(2)
    for _ in range(30):
        theta = theta + 0.1 * 2 * X.T @ (y - X @ theta) / len(y)
    np.testing.assert_allclose(traj.theta[-1], theta, atol=1e-12)


def test_single_point_and_frozen_sgd():
    X, y = np.array([[2.0]]), np.array([4.0])
    traj = sgd_least_squares(X, y, [0.0], StepSchedule.constant(0.1), 1, 1, rng=0)
    assert traj.theta[1, 0] == pytest.approx(0.1 * 2 * 2 * 4)
    X, y = synthetic_least_squares(n=20)
    traj = sgd_least_squares(X, y, [1.0, 1.0], StepSchedule.constant(0.0), 3, 10, rng=0)
    assert np.all(traj.theta == 1.0)
    with pytest.raises(ValueError):
        sgd_least_squares(X, y, [0, 0], StepSchedule.constant(0.1), 0, 10)
