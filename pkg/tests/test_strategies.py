import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cointexec import (InventoryTarget, MarketModel, OrderFlowModel, PenaltySpec,
                       StrategySpec, build_strategy)
from cointexec.riccati import asymptotic_coefficients, build_problem, solve_riccati
from cointexec.strategies import clipped_speed, optimal_speed, series_tail_speed
from cointexec.value_terms import compute_value_terms

from conftest import random_model, scalar_model


def _solve(model, pen, T=1.0, K=2000, target=None):
    sol = solve_riccati(build_problem(model, pen, T, K))
    target = target or InventoryTarget.zero(np.zeros(model.m), T)
    vt = compute_value_terms(sol, model, pen, target, OrderFlowModel.zero_flow(model.n))
    return sol, vt


def test_scalar_ac_speed_closed_form():
    # phi = 0: C(t) = -(tau/a + 1/alpha)^{-1}, so nu = q / (a (tau/a + 1/alpha))
    model = scalar_model(a=0.5)
    sol, vt = _solve(model, PenaltySpec(0.0, [[100.0]]))
    nu = optimal_speed(sol, vt, 0.0, model.theta, [1.0])
    assert nu[0] == pytest.approx(1.0 / (0.5 * (1.0 / 0.5 + 1.0 / 100.0)), rel=1e-10)
    assert nu[0] == pytest.approx(0.99502, rel=1e-5)


def test_speed_at_mean_is_ac_form(rng):
    model = random_model(rng, b_bar=False)
    sol, vt = _solve(model, PenaltySpec.isotropic(0.3, 20.0, 2))
    q = np.array([2.0, -1.0])
    for t in (0.0, 0.37, 0.9):
        _, C, _ = sol.coefficients(t)
        ref = -np.linalg.solve(model.a_temp, C @ q)
        np.testing.assert_allclose(optimal_speed(sol, vt, t, model.theta, q), ref, rtol=1e-12)


def test_zero_state_gives_zero_speed(rng):
    model = random_model(rng)
    sol, vt = _solve(model, PenaltySpec.isotropic(0.3, 20.0, 2))
    np.testing.assert_allclose(optimal_speed(sol, vt, 0.2, model.theta, np.zeros(2)), 0.0, atol=1e-14)


def test_speed_is_batched(rng):
    model = random_model(rng)
    sol, vt = _solve(model, PenaltySpec.isotropic(0.3, 20.0, 2))
    s = model.theta + rng.standard_normal((5, 3))
    q = rng.standard_normal((5, 2))
    batch = optimal_speed(sol, vt, 0.4, s, q)
    for i in range(5):
        np.testing.assert_allclose(batch[i], optimal_speed(sol, vt, 0.4, s[i], q[i]), rtol=1e-13)


def test_ac_strategy_consistency(nasdaq):
    model, sigma_ac = nasdaq
    spec = StrategySpec("AC", 1e-3, 1e6 * np.eye(2))
    strat = build_strategy(spec, model, [4600.0, 900.0], 1 / 6.5, grid_steps=2000, sigma_ac=sigma_ac)
    assert strat.model.n == 2 and np.all(strat.model.kappa == 0)
    rng = np.random.default_rng(3)
    for t in (0.0, 0.05, 0.15):
        q = rng.uniform(0, 5000, 2)
        z = rng.standard_normal(2)
        _, C, _ = strat.riccati.coefficients(t)
        ref = -np.linalg.solve(strat.model.a_temp, C @ q)
        np.testing.assert_allclose(strat.speed(t, z, q), ref, rtol=1e-10)


@pytest.mark.parametrize("raw, q, expected", [
    ((-1.0, 2.0), (5.0, 5.0), (0.0, 2.0)),
    ((3.0, 3.0), (0.0, 5.0), (0.0, 3.0)),
    ((0.0, 0.0), (5.0, 5.0), (0.0, 0.0)),
])
def test_clipped_speed_examples(raw, q, expected):
    np.testing.assert_array_equal(clipped_speed(raw, q), expected)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=5),
       st.lists(st.floats(-10, 10), min_size=5, max_size=5))
def test_clipping_is_idempotent_and_nonnegative(raw, q):
    q = np.array(q[:len(raw)])
    once = clipped_speed(raw, q)
    np.testing.assert_array_equal(clipped_speed(once, q), once)
    assert np.all(once >= 0)


def test_series_tail_examples():
    model = MarketModel(kappa=np.zeros((2, 2)), theta=[1.0, 1.0], sigma_cov=np.eye(2),
                        a_temp=np.eye(2))
    coeffs = asymptotic_coefficients(model, PenaltySpec.isotropic(0.0, 1e8, 2))
    np.testing.assert_allclose(series_tail_speed([100.0, 50.0], 0.1, np.zeros(2), None, coeffs),
                               [1000.0, 500.0], rtol=1e-14)
    np.testing.assert_array_equal(series_tail_speed(np.zeros(2), 0.3, np.zeros(2), np.zeros(2),
                                                    coeffs), 0.0)
    # leading coefficient exactly one with b = 0, a = 1
    assert np.allclose(-np.linalg.inv(coeffs.a_temp) @ coeffs.C_m1, np.eye(2), atol=0)
    with pytest.raises(ValueError):
        series_tail_speed([1.0, 1.0], 0.0, np.zeros(2), None, coeffs)


def test_series_tail_correction_is_linear_in_tau(rng):
    model = random_model(rng)
    coeffs = asymptotic_coefficients(model, PenaltySpec.isotropic(0.1, 1e8, 2))
    z, mu = rng.standard_normal(3), rng.standard_normal(3)
    base = lambda tau: series_tail_speed(np.zeros(2), tau, z, mu, coeffs)
    np.testing.assert_allclose(base(0.02), 2 * base(0.01), rtol=1e-12)


def test_series_tail_matches_solved_speed_near_horizon(rng):
    model = random_model(rng, b_bar=False)
    pen = PenaltySpec.isotropic(0.2, 1e8, 2)
    spec_ul = StrategySpec("UL", 0.2, pen.alpha_term)
    ul = build_strategy(spec_ul, model, [1.0, 1.0], 1.0, grid_steps=20000)
    q = np.array([1.0, 0.5])
    z = rng.standard_normal(3)
    gaps = []
    taus = np.array([2e-3, 4e-3, 8e-3])
    for tau in taus:
        exact = ul.speed(1.0 - tau, z, q)
        approx = series_tail_speed(q, tau, z, None, ul.coeffs)
        gaps.append(np.abs(exact - approx).max())
    # leading q/tau term cancels, the remainder stays bounded
    assert np.all(np.array(gaps) < 0.05 * np.abs(q / taus[:, None]).max(axis=1))
    assert max(gaps) < 10.0


def test_rl_speeds_nonnegative(nasdaq):
    model, sigma_ac = nasdaq
    rl = build_strategy(StrategySpec("RL", 1e-2, 1e6 * np.eye(2)), model, [4600.0, 900.0],
                        1 / 6.5, grid_steps=2000)
    rng = np.random.default_rng(0)
    z = 0.05 * rng.standard_normal((200, 5))
    q = rng.uniform(0, 5000, (200, 2))
    q[:20, 0] = 0.0
    nu = rl.speed(0.05, z, q)
    assert np.all(nu >= 0)
    assert np.all(nu[:20, 0] == 0)


def test_ul_can_repurchase(nasdaq):
    model, _ = nasdaq
    ul = build_strategy(StrategySpec("UL", 1e-3, 1e6 * np.eye(2)), model, [4600.0, 900.0],
                        1 / 6.5, grid_steps=2000)
    z = np.zeros(5)
    z[1] = 0.5   # SMH rich relative to the basket
    z[0] = -0.5
    nu = ul.speed(0.0, z, np.array([4600.0, 900.0]))
    assert np.any(nu < 0)


def test_ult_uses_ac_schedule(nasdaq):
    model, sigma_ac = nasdaq
    q0 = [4600.0, 900.0]
    ult = build_strategy(StrategySpec("ULT", 1e-2, 1e6 * np.eye(2)), model, q0, 1 / 6.5,
                         grid_steps=2000, sigma_ac=sigma_ac)
    np.testing.assert_allclose(ult.target(0.0), q0)
    assert np.all(np.abs(ult.target(1 / 6.5)) < 1e-9)
    ul = build_strategy(StrategySpec("UL", 1e-2, 1e6 * np.eye(2)), model, q0, 1 / 6.5,
                        grid_steps=2000)
    assert not np.allclose(ult.terms.D0[0], ul.terms.D0[0])


def test_unknown_kind_rejected():
    with pytest.raises(ValueError, match="unknown strategy kind"):
        StrategySpec("TWAP", 0.1, np.eye(1))


def test_invalid_penalty_rejected(nasdaq):
    model, _ = nasdaq
    from cointexec import ModelValidationError
    with pytest.raises(ModelValidationError):
        build_strategy(StrategySpec("UL", 0.1, -np.eye(2)), model, [1.0, 1.0], 0.1,
                       grid_steps=100)
