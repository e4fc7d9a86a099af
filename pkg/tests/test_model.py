from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from perturbed_ifs.model import ModelError, build_model, cc_affine, check_assumptions, expression_model, phi


def closed_forms(c0, c1, kappa, eps_star, window_hi=10.0):
    # period averages <cos> = 0, <cos^2> = 1/2, <cos^3> = 0; sup over x at tanh(window_hi)
    u = math.tanh(window_hi)
    return {
        "a": c0 + c1 * kappa * u / 2,
        "Lambda": c0**2 + c1**2 / 2 + kappa * u * c0 * c1,
        "c": 1.0 + eps_star,
        "delta": 1 - abs(kappa) * u,
        "M": 1 + abs(kappa) * u,
    }


def test_default_constants_match_closed_forms():
    rep = check_assumptions(cc_affine(), t_grid=2048)
    cf = closed_forms(0.5, 0.2, 0.5, 0.05)
    assert rep.a_hat == pytest.approx(0.55, abs=1e-6)
    assert rep.Lambda_hat == pytest.approx(0.32, abs=1e-6)
    assert rep.c_hat == pytest.approx(1.05, abs=1e-12)
    assert rep.delta_hat == pytest.approx(0.5, abs=1e-6)
    assert rep.M_hat == pytest.approx(1.5, abs=1e-6)
    assert rep.a_hat == pytest.approx(cf["a"], abs=1e-9)
    assert rep.Lambda_hat == pytest.approx(cf["Lambda"], abs=1e-9)
    assert rep.all_ok and rep.Lambda_half_ok and rep.holder_ok


def test_constants_match_adaptive_quadrature():
    m = cc_affine()
    x = np.array([10.0])
    lam_p = lambda t: float(m.lambda_fn(x, t) * m.p(x, t))  # noqa: E731
    lam2_p = lambda t: float(m.lambda_fn(x, t) ** 2 * m.p(x, t))  # noqa: E731
    rep = check_assumptions(m)
    assert rep.a_hat == pytest.approx(quad(lam_p, 0, 1, epsabs=1e-13)[0], abs=1e-9)
    assert rep.Lambda_hat == pytest.approx(quad(lam2_p, 0, 1, epsabs=1e-13)[0], abs=1e-9)


@given(
    c0=st.floats(0.3, 0.6),
    c1=st.floats(0.0, 0.3),
    kappa=st.floats(0.0, 0.9),
    eps=st.floats(0.0, 0.2),
)
def test_closed_forms_over_family(c0, c1, kappa, eps):
    rep = check_assumptions(cc_affine(c0=c0, c1=c1, kappa=kappa, epsilon=eps), t_grid=256, x_grid=64)
    cf = closed_forms(c0, c1, kappa, eps)
    assert rep.a_hat == pytest.approx(cf["a"], abs=1e-9)
    assert rep.Lambda_hat == pytest.approx(cf["Lambda"], abs=1e-9)
    assert rep.c_hat == pytest.approx(cf["c"], abs=1e-12)
    assert rep.a_hat <= math.sqrt(rep.Lambda_hat) + 1e-9
    assert rep.delta_hat > 0 and math.isfinite(rep.M_hat)
    assert rep.dini_ok


def test_kappa_zero_gives_flat_density():
    m = cc_affine(kappa=0.0)
    t = np.linspace(0, 1, 11)
    assert np.allclose(m.p(np.full((11, 1), 3.0), t), 1.0)
    assert m.omega_coeff == 0.0
    assert check_assumptions(m).dini_ratio == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("kappa", [1.2, 1.0, -1.5])
def test_kappa_too_large_rejected(kappa):
    with pytest.raises(ModelError, match="density positivity violated"):
        cc_affine(kappa=kappa)


def test_malformed_window_rejected():
    with pytest.raises(ModelError):
        cc_affine(window=(1.0, -1.0))
    with pytest.raises(ModelError):
        build_model({"family": "cc-affine", "window": (0.0, 1.0, 2.0)})


def test_build_model_validates_keys():
    m = build_model({"family": "cc-affine", "c0": 0.4, "kappa": 0.3})
    assert m.params == {"c0": 0.4, "c1": 0.2, "kappa": 0.3}
    with pytest.raises(ModelError, match="unknown"):
        build_model({"family": "cc-affine", "gamma": 1.0})
    with pytest.raises(ModelError, match="unknown model family"):
        build_model({"family": "lorenz"})


def test_refinement_within_error_estimate():
    m = cc_affine()
    coarse = check_assumptions(m, t_grid=1024, x_grid=201)
    fine = check_assumptions(m, t_grid=2048, x_grid=401)
    assert abs(fine.a_hat - coarse.a_hat) <= coarse.quad_error
    assert abs(fine.Lambda_hat - coarse.Lambda_hat) <= coarse.quad_error


def test_dini_ratio_attains_linear_modulus():
    kappa = 0.5
    rep = check_assumptions(cc_affine(kappa=kappa))
    bound = 2 * kappa / math.pi
    assert rep.dini_ratio <= bound * (1 + 1e-6)
    # the steepest part of tanh is at 0, where the ratio approaches the bound
    assert rep.dini_ratio >= 0.99 * bound


def test_lambda_between_half_and_one():
    rep = check_assumptions(cc_affine(c0=0.75, c1=0.1, kappa=0.0))
    assert rep.Lambda_hat == pytest.approx(0.75**2 + 0.1**2 / 2, abs=1e-9)
    assert rep.Lambda_ok and not rep.Lambda_half_ok


def test_contracting_failure_is_reported():
    rep = check_assumptions(cc_affine(c0=1.2, c1=0.0, kappa=0.0))
    assert not rep.a_ok and not rep.all_ok


def test_expression_model_reproduces_builtin():
    expr = expression_model(
        S="(c0 + c1*cos(2*pi*t/T))*x + 1",
        lam="abs(c0 + c1*cos(2*pi*t/T))",
        p="(1 + kappa*tanh(x)*cos(2*pi*t/T))/T",
        T=1.0,
        epsilon=0.05,
        omega_coeff=1 / math.pi,
        params={"c0": 0.5, "c1": 0.2, "kappa": 0.5},
    )
    a, b = check_assumptions(expr), check_assumptions(cc_affine())
    for key in ("a_hat", "Lambda_hat", "c_hat", "delta_hat", "M_hat", "dini_ratio"):
        assert getattr(a, key) == pytest.approx(getattr(b, key), abs=1e-12)
    x = np.array([[0.3], [2.0]])
    t = np.array([0.1, 0.7])
    assert np.allclose(expr.S(x, t), cc_affine().S(x, t))


def test_expression_rejects_unknown_names():
    with pytest.raises(ModelError, match="unknown name"):
        expression_model(S="x", lam="1", p="open(1)", T=1.0, epsilon=0.0, omega_coeff=0.0)


def test_expression_unnormalized_density_rejected():
    with pytest.raises(ModelError, match="normalized"):
        expression_model(S="x", lam="0.5", p="2 + 0*x", T=1.0, epsilon=0.0, omega_coeff=0.0)


def test_pathological_lipschitz_factor_reports_failure():
    m = expression_model(S="0.5*x", lam="exp(1000*x)", p="1 + 0*x", T=1.0, epsilon=0.0, omega_coeff=0.0)
    rep = check_assumptions(m)
    assert not rep.a_ok and not rep.all_ok


def test_grid_minimum_enforced():
    with pytest.raises(ValueError):
        check_assumptions(cc_affine(), t_grid=32)


def test_phi_linear_modulus():
    assert phi(2.0, 0.5, 3.0) == pytest.approx(sum(2.0 * 0.5**n * 3.0 for n in range(1, 200)))
    with pytest.raises(ValueError):
        phi(1.0, 1.0, 1.0)


def test_reference_distance():
    m = cc_affine()
    assert np.allclose(m.V(np.array([[3.0], [-2.0]])), [3.0, 2.0])
