import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cointexec.model import (DimensionError, InventoryTarget, MarketModel, ModelValidationError,
                             OrderFlowModel, PenaltySpec, clamp_psd, load_model, model_from_dict,
                             model_to_dict, save_model, selection_matrix, sub_covariance,
                             validate_model)

from conftest import scalar_model


def test_nasdaq_model_passes_validation(nasdaq):
    model, _ = nasdaq
    assert (model.n, model.m) == (5, 2)
    rep = validate_model(model, PenaltySpec.isotropic(0.01, 1e6, 2))
    assert rep.passed, rep.summary()


def test_zero_alpha_fails():
    rep = validate_model(scalar_model(a=1.0), PenaltySpec(0.0, [[0.0]]))
    assert not rep.passed
    assert rep["alpha - 1/2 X b X^T positive definite"].min_eigenvalue == 0.0


def test_alpha_below_half_permanent_impact_fails():
    m = MarketModel(kappa=np.zeros((2, 2)), theta=[1, 1], sigma_cov=np.eye(2),
                    a_temp=np.eye(2), b_perm=np.diag([4.0, 4.0]))
    rep = validate_model(m, PenaltySpec(0.0, np.eye(2)))
    check = rep["alpha - 1/2 X b X^T positive definite"]
    assert not check.passed
    assert check.min_eigenvalue == pytest.approx(-1.0)
    with pytest.raises(ModelValidationError):
        rep.raise_if_failed()


def test_asymmetric_sigma_is_reported(nasdaq):
    raw = model_from_dict(json.loads(json.dumps(model_to_dict(nasdaq[0]))))[0]
    S = np.array(raw.sigma_cov)
    S[4, 0] += 0.001
    rep = validate_model(raw.replace(sigma_cov=S), PenaltySpec.isotropic(0.0, 1e6, 2))
    assert not rep["sigma_cov symmetric"].passed


def test_dimension_errors_name_the_field():
    with pytest.raises(DimensionError) as exc:
        MarketModel(kappa=np.eye(3), theta=[1, 2], sigma_cov=np.eye(2), a_temp=[[1.0]])
    assert exc.value.field == "kappa"
    with pytest.raises(DimensionError) as exc:
        MarketModel(kappa=np.eye(2), theta=[1, 2], sigma_cov=np.eye(2), a_temp=np.eye(3))
    assert exc.value.field == "a_temp"
    m = MarketModel(kappa=np.eye(2), theta=[1, 2], sigma_cov=np.eye(2), a_temp=[[1.0]])
    with pytest.raises(DimensionError) as exc:
        validate_model(m, PenaltySpec(0.0, np.eye(2)))
    assert exc.value.field == "alpha_term"


def test_negative_phi_rejected():
    with pytest.raises(ValueError):
        PenaltySpec(-1e-3, [[1.0]])


def test_sub_covariance_examples(nasdaq):
    np.testing.assert_allclose(sub_covariance(nasdaq[0]), [[0.124, 0.108], [0.108, 0.194]])
    m = MarketModel(kappa=np.zeros((5, 5)), theta=np.ones(5), sigma_cov=np.eye(5), a_temp=np.eye(2))
    np.testing.assert_array_equal(sub_covariance(m), np.eye(2))
    m = MarketModel(kappa=np.zeros((3, 3)), theta=np.ones(3), sigma_cov=np.ones((3, 3)), a_temp=np.eye(3))
    np.testing.assert_array_equal(sub_covariance(m), np.ones((3, 3)))


@given(st.integers(1, 6).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n))))
def test_selection_is_a_partial_isometry(nm):
    n, m = nm
    X = selection_matrix(m, n)
    np.testing.assert_array_equal(X @ X.T, np.eye(m))
    assert X.sum() == m


@settings(max_examples=50)
@given(st.integers(2, 5).flatmap(lambda n: st.tuples(
    arrays(float, (n, n), elements=st.floats(-3, 3)), st.integers(1, n))))
def test_sub_covariance_is_psd(args):
    B, m = args
    n = B.shape[0]
    S = B @ B.T
    model = MarketModel(kappa=np.zeros((n, n)), theta=np.zeros(n), sigma_cov=S, a_temp=np.eye(m))
    sub = sub_covariance(model)
    np.testing.assert_array_equal(sub, sub.T)
    assert np.linalg.eigvalsh(sub).min() >= -1e-9 * max(1.0, np.abs(S).max())


def test_clamp_psd():
    S = np.diag([1.0, -1e-14])
    assert np.linalg.eigvalsh(clamp_psd(S)).min() >= 0
    with pytest.raises(ValueError):
        clamp_psd(np.diag([1.0, -0.1]))


def test_model_is_immutable(nasdaq):
    with pytest.raises(ValueError):
        nasdaq[0].kappa[0, 0] = 1.0


def test_json_round_trip(tmp_path, nasdaq):
    model, sigma_ac = nasdaq
    pen = PenaltySpec.isotropic(1e-3, 1e6, 2)
    path = tmp_path / "m.json"
    save_model(path, model, pen, sigma_ac)
    d = json.loads(path.read_text())
    assert d["version"] == "cointexec-model-v1"
    assert d["selection"] == [[1, 0, 0, 0, 0], [0, 1, 0, 0, 0]]
    m2, p2, s2 = load_model(path)
    np.testing.assert_array_equal(m2.kappa, model.kappa)
    np.testing.assert_array_equal(p2.alpha_term, pen.alpha_term)
    np.testing.assert_array_equal(s2, sigma_ac)
    d["version"] = "other"
    with pytest.raises(ValueError):
        model_from_dict(d)


def test_restrict_and_ac_reduction(nasdaq):
    model, sigma_ac = nasdaq
    r = model.restrict()
    assert (r.n, r.m) == (2, 2)
    np.testing.assert_array_equal(r.kappa, np.asarray(model.kappa)[:2, :2])
    ac = model.ac_reduction(sigma_ac)
    np.testing.assert_array_equal(ac.kappa, np.zeros((2, 2)))
    np.testing.assert_array_equal(ac.sigma_cov, sigma_ac)


def test_inventory_targets():
    t = InventoryTarget.linear([10.0, 4.0], 2.0)
    assert t.endpoints_ok()
    np.testing.assert_allclose(t(1.0), [5.0, 2.0])
    z = InventoryTarget.zero([10.0], 1.0)
    assert z.is_zero() and not z.endpoints_ok()
    g = InventoryTarget.from_grid([0.0, 0.5, 1.0], [[2.0], [1.0], [0.0]])
    np.testing.assert_allclose(g(0.25), [1.5])


def test_zero_flow_coefficients():
    f = OrderFlowModel.zero_flow(3)
    a, b = f.conditional_mean_coeffs(0.0, 1.0)
    np.testing.assert_array_equal(a, 0)
    np.testing.assert_array_equal(b, 0)


def test_affine_flow_conditional_mean_solves_its_ode():
    K = np.array([[2.0, 0.5], [-0.3, 1.0]])
    f = OrderFlowModel.affine_ou(K, [1.0, -2.0])
    mu_t = np.array([0.3, 0.7])

    def mean(u):
        alpha, beta = f.conditional_mean_coeffs(0.2, u)
        return alpha + beta @ mu_t

    np.testing.assert_allclose(mean(0.2), mu_t, atol=1e-14)
    h = 1e-5
    u = 0.9
    deriv = (mean(u + h) - mean(u - h)) / (2 * h)
    np.testing.assert_allclose(deriv, K @ (f.mean - mean(u)), rtol=1e-7)
