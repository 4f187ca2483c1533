import numpy as np
import pytest
from scipy import optimize

from homogenize_lab.env import EnvironmentSpec, create_environment
from homogenize_lab.errors import CoercivityError, ConfigError, DomainError
from homogenize_lab.model import (ConstantCost, DynamicsSpec, LagrangianSpec, ModelSpec, PowerCost,
                                  SmoothAbsTerminal, check_assumptions, radius_ladder, truncation_radius)

ENV = create_environment(EnvironmentSpec("periodic"), 7)


def cov(beta=2.0, env=ENV):
    return ModelSpec(DynamicsSpec("calculus_of_variations"), LagrangianSpec(PowerCost(beta), env=env))


def test_power_cost_default_coef():
    assert PowerCost(2.0)(np.array([[3.0]]))[0] == pytest.approx(4.5)
    assert PowerCost(4.0, 1.0).radial(2.0) == pytest.approx(16.0)
    with pytest.raises(ConfigError):
        PowerCost(-1.0)


def test_bounded_speed_dynamics():
    dyn = DynamicsSpec("bounded_speed", C=2.0, delta=1.0)
    u = np.linspace(-50, 50, 1001)[:, None]
    v = dyn.f(np.zeros(1), u)
    np.testing.assert_allclose(v[:, 0], 2.0 * u[:, 0] / np.sqrt(u[:, 0] ** 2 + 1))
    assert dyn.f_star(3.0) == pytest.approx(6 / np.sqrt(10))
    back = dyn.invert_dynamics(np.zeros(1), u[:5], v[:5])
    np.testing.assert_allclose(back, u[:5], rtol=1e-12)


def test_invert_outside_ball_raises():
    dyn = DynamicsSpec("bounded_speed", C=2.0, delta=1.0)
    with pytest.raises(DomainError):
        dyn.invert_dynamics(np.zeros(1), np.array([[0.0]]), np.array([[1.99999]]))


def test_user_table_dynamics_from_function():
    xs = np.linspace(-1, 1, 5)
    us = np.linspace(-3, 3, 61)
    dyn = DynamicsSpec.from_function(lambda x, u: (1.0 + 0.2 * x) * u, xs, us,
                                     eta_decl=1.0, lip_H_decl=1.25, M_tilde_decl=0.0)
    v = dyn.f(np.array([0.5]), np.array([[1.25]]))
    assert float(v[0, 0]) == pytest.approx(1.1 * 1.25, rel=1e-9)


def test_lower_bound_and_hash():
    m = cov()
    u = np.array([[0.0], [1.0], [-2.0]])
    np.testing.assert_allclose(m.L_star(u), 0.5 * u[:, 0] ** 2)
    assert m.hash() == cov().hash()
    assert m.hash() != cov(beta=3.0).hash()


def test_smooth_abs_terminal():
    psi = SmoothAbsTerminal(2.0, 0.5)
    x = np.array([[0.0], [0.5], [-3.0]])
    np.testing.assert_allclose(psi(x), 2 * (np.sqrt(x[:, 0] ** 2 + 0.25) - 0.5))
    assert psi.modulus(0.3) == pytest.approx(0.6)
    with pytest.raises(ConfigError) as err:
        SmoothAbsTerminal(1.0, 0.0)
    assert err.value.field == "model.psi.width"


def test_truncation_radius_is_on_the_ladder():
    m = ModelSpec(DynamicsSpec("bounded_speed", C=2.0, delta=1.0), LagrangianSpec(PowerCost(2.0), env=ENV))
    R = truncation_radius(m, W=3.0)
    assert np.any(np.isclose(radius_ladder(), R))
    assert R > m.dynamics.M


def test_truncation_radius_needs_growth():
    m = ModelSpec(DynamicsSpec("calculus_of_variations"), LagrangianSpec(ConstantCost(1.0), env=ENV))
    with pytest.raises(CoercivityError):
        truncation_radius(m, W=5.0)


def test_assumptions_pass_for_standard_models():
    for dyn in (DynamicsSpec("calculus_of_variations"), DynamicsSpec("bounded_speed", C=2.0, delta=1.0)):
        rep = check_assumptions(ModelSpec(dyn, LagrangianSpec(PowerCost(2.0), env=ENV)))
        assert rep.all_passed, [r for r in rep.results if not r.passed]
        assert [r.index for r in rep.results] == list(range(1, 9))


def test_theta_inverts_the_jacobian():
    assert float(np.ravel(cov().theta(np.array([[1.5]])))[0]) == pytest.approx(1.5)
    m = ModelSpec(DynamicsSpec("bounded_speed", C=2.0, delta=1.0), LagrangianSpec(PowerCost(2.0), env=ENV))
    for u in (0.3, 1.0, -2.5):
        h = 1e-6
        fp = (m.dynamics.f(np.zeros(1), np.array([[u + h]])) - m.dynamics.f(np.zeros(1), np.array([[u - h]])))
        ref = u / (float(fp[0, 0]) / (2 * h))
        assert float(np.ravel(m.theta(np.array([[u]])))[0]) == pytest.approx(ref, rel=1e-6)
