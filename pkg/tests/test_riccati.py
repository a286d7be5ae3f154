import numpy as np
import pytest

from cointexec.model import MarketModel, PenaltySpec
from cointexec.riccati import (RiccatiBlowUpError, asymptotic_coefficients, build_problem,
                               oracle_bound_solution, solve_riccati)

from conftest import random_spd, scalar_model


def scalar_ac_C(tau, a, alpha, phi=0.0, sigma=1.0):
    """Closed-form C for one asset without mean reversion.

    Minimizing a int nu^2 + phi sigma int q^2 + alpha q_T^2 gives
    dC/dtau = (C^2 - c^2)/a with c^2 = a phi sigma and C(0) = -alpha.
    """
    if phi == 0:
        return -1.0 / (tau / a + 1.0 / alpha)
    c = np.sqrt(a * phi * sigma)
    xi = (alpha - c) / (alpha + c)
    e = xi * np.exp(-2 * c * tau / a)
    return -c * (1 + e) / (1 - e)


def test_block_structure(nasdaq):
    model, _ = nasdaq
    pen = PenaltySpec.isotropic(0.01, 1e6, 2)
    p = build_problem(model, pen, 1 / 6.5, 10)
    kap = np.asarray(model.kappa)
    np.testing.assert_array_equal(p.M1[5:, 5:], 0.5 * np.linalg.inv(model.a_temp))
    np.testing.assert_array_equal(p.M1[:5], 0)
    np.testing.assert_array_equal(p.M2[:5, :5], -kap)
    np.testing.assert_array_equal(p.M2[5:], 0)
    np.testing.assert_array_equal(p.M3[:5, 5:], -kap.T[:, :2])
    np.testing.assert_array_equal(p.M3[5:, :5], -kap[:2])
    np.testing.assert_allclose(p.M3[5:, 5:], -0.02 * np.array([[0.124, 0.108], [0.108, 0.194]]))
    np.testing.assert_array_equal(p.M3[:5, :5], 0)
    np.testing.assert_array_equal(p.G_terminal[5:, 5:], -2e6 * np.eye(2))


def test_scalar_closed_form():
    a, alpha = 0.5, 100.0
    sol = solve_riccati(build_problem(scalar_model(a=a), PenaltySpec(0.0, [[alpha]]), 1.0, 1000))
    tau = 1.0 - sol.times
    np.testing.assert_allclose(sol.C[:, 0, 0], scalar_ac_C(tau, a, alpha), rtol=1e-12, atol=1e-12)
    # C(0) = -(T/a + 1/alpha)^{-1}
    assert sol.C[0, 0, 0] == pytest.approx(-1 / 2.01, rel=1e-12)


def test_fourth_order_convergence():
    a, alpha, phi = 1.0, 10.0, 4.0
    model = scalar_model(a=a)
    exact = scalar_ac_C(1.0, a, alpha, phi)
    errs = [abs(solve_riccati(build_problem(model, PenaltySpec(phi, [[alpha]]), 1.0, K)).C[0, 0, 0] - exact)
            for K in (10, 20, 40)]
    assert errs[0] / errs[1] >= 12
    assert errs[1] / errs[2] >= 12


def test_terminal_symmetry_and_E(nasdaq):
    model, _ = nasdaq
    p = build_problem(model, PenaltySpec.isotropic(0.01, 1e6, 2), 1 / 6.5, 2000)
    sol = solve_riccati(p)
    assert np.abs(sol.G[-1] - p.G_terminal).max() <= 1e-12
    np.testing.assert_array_equal(sol.G, np.swapaxes(sol.G, 1, 2))
    assert np.abs(sol.E[-1] - model.selection.T).max() <= 1e-12


def test_ac_reduction_keeps_A_zero_and_E_identity(rng):
    m = 3
    model = MarketModel(kappa=np.zeros((m, m)), theta=np.ones(m), sigma_cov=random_spd(rng, m),
                        a_temp=random_spd(rng, m))
    sol = solve_riccati(build_problem(model, PenaltySpec(0.3, random_spd(rng, m, 10)), 1.0, 500))
    assert np.abs(sol.A).max() <= 1e-10
    assert np.abs(sol.E - np.eye(m)).max() <= 1e-10


def test_richardson_self_consistency(nasdaq):
    model, _ = nasdaq
    pen = PenaltySpec.isotropic(0.01, 1e6, 2)
    full = solve_riccati(build_problem(model, pen, 1 / 6.5, 20000)).C[0]
    half = solve_riccati(build_problem(model, pen, 1 / 6.5, 10000)).C[0]
    assert np.abs(half - full).max() <= 1e-6 * np.abs(full).max()


def test_too_coarse_grid_is_detected(nasdaq):
    with pytest.raises(RiccatiBlowUpError):
        solve_riccati(build_problem(nasdaq[0], PenaltySpec.isotropic(0.01, 1e6, 2), 1.0, 10))


def test_blow_up_reports_time():
    # alpha < b/2 violates the bounded-solution condition; the pole sits at tau = 0.01
    model = scalar_model(a=0.01, b=4.0)
    with pytest.raises(RiccatiBlowUpError) as exc:
        solve_riccati(build_problem(model, PenaltySpec(0.0, [[1.0]]), 1.0, 1000))
    assert exc.value.time == pytest.approx(0.99, abs=2e-3)


def test_interpolation_is_linear(nasdaq):
    model, _ = nasdaq
    sol = solve_riccati(build_problem(model, PenaltySpec.isotropic(0.01, 1e6, 2), 1.0, 100))
    t = 0.5 * (sol.times[10] + sol.times[11])
    np.testing.assert_allclose(sol.coefficients(t)[1], 0.5 * (sol.C[10] + sol.C[11]))
    with pytest.raises(ValueError):
        sol.coefficients(1.5)


def test_csv_dump(tmp_path, nasdaq):
    model, _ = nasdaq
    sol = solve_riccati(build_problem(model, PenaltySpec.isotropic(0.01, 1e6, 2), 1.0, 100))
    path = tmp_path / "r.csv"
    sol.to_csv(path)
    lines = path.read_text().splitlines()
    assert len(lines) == 102
    assert len(lines[0].split(",")) == 1 + 25 + 4 + 10
    assert float(lines[-1].split(",")[26]) == -1e6


class TestAsymptotics:
    def test_no_impact_gives_minus_a(self):
        m = MarketModel(kappa=np.zeros((2, 2)), theta=[1, 1], sigma_cov=np.eye(2), a_temp=np.eye(2))
        co = asymptotic_coefficients(m, PenaltySpec(0.0, np.eye(2)))
        np.testing.assert_array_equal(co.C_m1, -np.eye(2))
        np.testing.assert_array_equal(co.E1, 0)
        np.testing.assert_array_equal(co.C0, 0)
        np.testing.assert_array_equal(co.A1, 0)

    def test_nasdaq_E1(self, nasdaq):
        co = asymptotic_coefficients(nasdaq[0], PenaltySpec.isotropic(0.01, 1e6, 2))
        # hand arithmetic: -1/2 of the INTC and SMH rows of kappa, as columns
        expected = -0.5 * np.array([[45.66, -19.83], [-38.51, 16.73], [-2.43, 1.06],
                                    [8.26, -3.59], [-47.01, 20.42]])
        np.testing.assert_allclose(co.E1, expected, rtol=1e-15)
        np.testing.assert_array_equal(co.E0, nasdaq[0].selection.T)

    def test_near_terminal_series(self):
        kap = np.array([[1.5, -0.8, 0.3], [-0.6, 1.2, -0.4], [0.2, -0.5, 0.9]])
        model = MarketModel(kappa=kap, theta=[1, 2, 3], sigma_cov=np.eye(3), a_temp=0.01 * np.eye(2))
        pen = PenaltySpec.isotropic(0.05, 1e8, 2)
        sol = solve_riccati(build_problem(model, pen, 1.0, 20000))
        co = asymptotic_coefficients(model, pen)
        tau = 1.0 - sol.times
        w = (tau >= 1e-3 - 1e-12) & (tau <= 1e-2 + 1e-12)
        c_err = np.array([np.abs(C - co.C_m1 / t).max() for C, t in zip(sol.C[w], tau[w])])
        e_err = np.array([np.abs(E - co.E0 - co.E1 * t).max() for E, t in zip(sol.E[w], tau[w])])
        assert c_err.max() < 1.0
        assert np.max(e_err / tau[w] ** 2) < 10.0
        assert np.polyfit(np.log(tau[w]), np.log(e_err), 1)[0] > 1.8


class TestOracleBound:
    def test_zero_kappa(self):
        m = MarketModel(kappa=np.zeros((2, 2)), theta=[1, 1], sigma_cov=np.eye(2), a_temp=[[1.0]])
        H11, _ = oracle_bound_solution(m, PenaltySpec(0.5, [[10.0]]), 0.2, 1.0)
        np.testing.assert_array_equal(H11, 0)

    def test_scalar_H11(self):
        m = scalar_model(kappa=1.0, a=0.5)
        for t in (0.0, 0.3, 0.9):
            H11, _ = oracle_bound_solution(m, PenaltySpec(0.5, [[100.0]]), t, 1.0)
            assert H11[0, 0] == pytest.approx((1 - np.exp(-2 * (1 - t))) / 2, rel=1e-13)

    def test_H22(self):
        m = scalar_model(a=0.5)
        _, H22 = oracle_bound_solution(m, PenaltySpec(0.5, [[100.0]]), 1.0, 1.0)
        assert H22[0, 0] == pytest.approx(-200.0)
        _, H22 = oracle_bound_solution(m, PenaltySpec(0.5, [[100.0]]), 0.0, 1.0)
        assert H22[0, 0] == pytest.approx(2 * scalar_ac_C(1.0, 0.5, 100.0))

    def test_singular_sigma_tilde(self):
        m = scalar_model(sigma=0.0)
        with pytest.raises(ValueError):
            oracle_bound_solution(m, PenaltySpec(0.5, [[1.0]]), 0.0, 1.0)

    @pytest.mark.parametrize("seed", range(4))
    def test_bound_dominates_solution(self, seed):
        rng = np.random.default_rng(seed)
        n, m = 3, 2
        model = MarketModel(kappa=rng.standard_normal((n, n)), theta=np.ones(n),
                            sigma_cov=random_spd(rng, n), a_temp=random_spd(rng, m))
        pen = PenaltySpec(rng.uniform(0.1, 1.0), random_spd(rng, m, 5.0))
        sol = solve_riccati(build_problem(model, pen, 1.0, 400))
        for k in (0, 100, 300, 400):
            H11, H22 = oracle_bound_solution(model, pen, sol.times[k], 1.0)
            H = np.zeros((n + m, n + m))
            H[:n, :n], H[n:, n:] = H11, H22
            gap = H - sol.G[k]
            assert np.linalg.eigvalsh(0.5 * (gap + gap.T)).min() >= -1e-8 * (1 + np.abs(H).max())

    def test_bound_dominates_nasdaq(self, nasdaq):
        model, _ = nasdaq
        pen = PenaltySpec.isotropic(0.01, 1e6, 2)
        T = 1 / 6.5
        sol = solve_riccati(build_problem(model, pen, T, 2000))
        for k in (0, 1000, 1990):
            H11, H22 = oracle_bound_solution(model, pen, sol.times[k], T)
            H = np.zeros((7, 7))
            H[:5, :5], H[5:, 5:] = H11, H22
            gap = H - sol.G[k]
            assert np.linalg.eigvalsh(0.5 * (gap + gap.T)).min() >= -1e-8 * np.abs(H).max()
