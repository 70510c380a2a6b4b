import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskac.actor import (ActorState, DegenerateVariance, PowerSchedule, ScheduleError,
                          StepSchedules, average_actor_direction, first_order_step,
                          lambda_step, newton_step, project_theta, sharpe_direction_average,
                          sharpe_direction_discounted)
from riskac.instances import random_mdp
from riskac.mdp import BoltzmannPolicy, log_policy_gradient, tabular_policy_features
from riskac.oracle import (grad_average, grad_discounted, grad_lagrangian_average,
                           lagrangian_discounted, sharpe_gradient_average, solve_average)
from riskac.perturb import PerturbationDraw


def actor(theta, lo=0.0, hi=10.0, **kw):
    return ActorState(np.asarray(theta, float), lo, hi, **kw)


def test_projection_examples():
    box = (np.zeros(2), np.full(2, 10.0))
    np.testing.assert_array_equal(project_theta([3.0, 4.0], box), [3.0, 4.0])
    np.testing.assert_array_equal(project_theta([12.0, -3.0], box), [10.0, 0.0])
    once = project_theta([12.0, -3.0], box)
    np.testing.assert_array_equal(project_theta(once, box), once)


def test_first_order_examples():
    a = actor(np.full(3, 5.0))
    np.testing.assert_array_equal(first_order_step(a, np.zeros(3), 0.7).theta, a.theta)
    np.testing.assert_array_equal(first_order_step(a, np.ones(3), 0.5).theta, np.full(3, 5.5))
    np.testing.assert_array_equal(first_order_step(a, np.array([100.0, -100.0, 0.0]), 1.0).theta,
                                  [10.0, 0.0, 5.0])


def test_newton_examples(rng):
    a = actor(np.full(2, 5.0))
    g = rng.standard_normal(2)
    np.testing.assert_array_equal(newton_step(a, np.eye(2), g, 0.3).theta,
                                  first_order_step(a, g, 0.3).theta)
    np.testing.assert_array_equal(newton_step(a, np.eye(2), np.zeros(2), 0.3).theta, a.theta)
    with pytest.raises(ValueError):
        newton_step(a, np.eye(3), g, 0.3)


def test_exact_newton_solves_quadratic(rng):
    B = rng.standard_normal((4, 4))
    A = B @ B.T + 4 * np.eye(4)
    c = rng.standard_normal(4)
    x_star = np.linalg.solve(A, c)           # minimiser of 0.5 x'Ax - c'x
    a = actor(rng.standard_normal(4), -1e6, 1e6)
    direction = -(A @ a.theta - c)            # ascent direction of -L
    out = newton_step(a, np.linalg.inv(A), direction, 1.0)
    assert np.abs(out.theta - x_star).max() < 1e-8


def test_lambda_examples():
    a = actor([1.0], lam=3.0, alpha=20.0)
    assert lambda_step(a, 20.0, 0.5).lam == 3.0
    assert lambda_step(actor([1.0], lam=0.0, alpha=20.0), 5.0, 1.0).lam == 0.0
    assert lambda_step(actor([1.0], lam=1000.0, alpha=20.0), 1e6, 1.0).lam == 1000.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3),
       st.floats(-1e6, 1e6), st.floats(0, 5))
def test_iterates_stay_in_their_sets(direction, var, step):
    a = actor(np.full(3, 5.0), alpha=20.0)
    for _ in range(5):
        a = first_order_step(a, direction, step)
        a = lambda_step(a, var, step)
        assert np.all((a.theta >= 0) & (a.theta <= 10))
        assert 0 <= a.lam <= a.lambda_max


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1e3), st.floats(-100, 100), st.floats(-100, 100), st.floats(0, 2))
def test_lambda_step_is_monotone(lam, v1, v2, z):
    a = actor([0.0], lam=lam, alpha=1.0)
    lo, hi = sorted((v1, v2))
    assert lambda_step(a, lo, z).lam <= lambda_step(a, hi, z).lam


def test_schedule_validation():
    s = StepSchedules()
    assert (s.zeta1.power, s.zeta2.power, s.zeta2p.power, s.zeta3.power) == (1, 0.75, 0.7, 0.66)
    assert s.zeta2(16) == pytest.approx(16 ** -0.75)
    assert s.zeta4(1) == 1.0
    with pytest.raises(ScheduleError):
        StepSchedules(zeta1=PowerSchedule(1, 0.4))
    with pytest.raises(ScheduleError):
        StepSchedules(zeta2=PowerSchedule(1, 0.65))
    with pytest.raises(ScheduleError):
        StepSchedules(zeta2p=PowerSchedule(1, 0.8))
    with pytest.raises(ScheduleError):
        StepSchedules(k=0)
    assert StepSchedules.from_dict(s.to_dict()) == s


def test_descent_on_the_oracle_lagrangian(rng):
    mdp = random_mdp(rng, 4, 2)
    f = rng.standard_normal((4, 2, 3))
    a = actor(0.2 * rng.standard_normal(3), -5, 5)
    lam = 0.3
    pol = BoltzmannPolicy(a.theta, f)
    g = grad_discounted(mdp, pol, lam)[2]
    before = lagrangian_discounted(mdp, pol, lam)
    after = lagrangian_discounted(mdp, pol.with_theta(first_order_step(a, -g, 1e-3).theta), lam)
    assert after < before


def test_average_direction_examples(rng):
    psi = rng.standard_normal(4)
    np.testing.assert_array_equal(average_actor_direction(0.7, 3.0, psi, 0.2, 0.0), 0.7 * psi)
    np.testing.assert_array_equal(average_actor_direction(0.0, 0.0, psi, 0.2, 5.0), np.zeros(4))


def _stationary_expectation(mdp, pol, fn):
    """Exhaustive expectation of fn(delta, epsilon, psi) under the stationary law."""
    av = solve_average(mdp, pol)
    mu = pol.probs_table()
    r2 = mdp.reward_second_moment()
    out = 0.0
    for x in range(mdp.num_states):
        for a in range(mdp.num_actions):
            psi = log_policy_gradient(pol, x, a)
            for y in range(mdp.num_states):
                p = av.d_stat[x] * mu[x, a] * mdp.transition[x, a, y]
                if p == 0:
                    continue
                # delta is linear in R, epsilon in R^2, so expected rewards suffice
                delta = mdp.reward_mean[x, a] - av.rho + av.V_diff[y] - av.V_diff[x]
                eps = r2[x, a] - av.eta + av.U_diff[y] - av.U_diff[x]
                out = out + p * fn(delta, eps, psi, av)
    return out


@pytest.mark.parametrize("noise", ["none", "uniform"])
def test_average_direction_is_unbiased(noise):
    r = np.random.default_rng(17)
    mdp = random_mdp(r, 4, 3, noise_kind=noise)
    pol = BoltzmannPolicy(r.standard_normal(12), tabular_policy_features(4, 3))
    lam = 0.4
    exp = _stationary_expectation(
        mdp, pol, lambda d, e, psi, av: average_actor_direction(d, e, psi, av.rho, lam))
    np.testing.assert_allclose(exp, -grad_lagrangian_average(mdp, pol, lam), atol=1e-6)
    g_rho, _ = grad_average(mdp, pol)
    exp0 = _stationary_expectation(
        mdp, pol, lambda d, e, psi, av: average_actor_direction(d, e, psi, av.rho, 0.0))
    np.testing.assert_allclose(exp0, g_rho, atol=1e-6)


def test_average_sharpe_direction_is_unbiased():
    r = np.random.default_rng(18)
    mdp = random_mdp(r, 4, 3)
    pol = BoltzmannPolicy(r.standard_normal(12), tabular_policy_features(4, 3))
    exp = _stationary_expectation(
        mdp, pol, lambda d, e, psi, av: sharpe_direction_average(d, e, psi, av.rho, av.eta))
    np.testing.assert_allclose(exp, sharpe_gradient_average(mdp, pol), atol=1e-6)


def test_sharpe_examples(rng):
    psi = rng.standard_normal(3)
    np.testing.assert_array_equal(sharpe_direction_average(0.0, 0.0, psi, 0.5, 1.0), np.zeros(3))
    np.testing.assert_allclose(sharpe_direction_average(0.3, 9.0, psi, 0.0, 4.0), 0.3 * psi / 2)
    draw = PerturbationDraw(np.array([1.0, -1.0]), 0.2)
    np.testing.assert_array_equal(sharpe_direction_discounted(0.0, 0.0, 1.0, 5.0, draw), np.zeros(2))
    np.testing.assert_allclose(sharpe_direction_discounted(0.5, 7.0, 0.0, 4.0, draw),
                               0.5 / (2.0 * 0.2 * draw.delta))
    gdraw = PerturbationDraw(np.array([0.5, 2.0]), 0.2, "gaussian")
    np.testing.assert_allclose(sharpe_direction_discounted(0.5, 7.0, 0.0, 4.0, gdraw),
                               gdraw.delta / 0.2 * 0.25)
    with pytest.raises(DegenerateVariance):
        sharpe_direction_discounted(0.1, 0.1, 2.0, 4.0, draw)
    with pytest.raises(DegenerateVariance):
        sharpe_direction_average(0.1, 0.1, psi, 1.0, 1.0)


def test_actor_state_validation():
    with pytest.raises(ValueError):
        ActorState(np.zeros(2), 1.0, 0.0)
    a = ActorState(np.array([20.0, -5.0]), 0.0, 10.0, lam=5e3)
    np.testing.assert_array_equal(a.theta, [10.0, 0.0])
    assert a.lam == 1000.0
