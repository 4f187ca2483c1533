import numpy as np
import pytest
from scipy import optimize

from homogenize_lab.cell import EffectiveLagrangianTable
from homogenize_lab.env import EnvironmentSpec, create_environment
from homogenize_lab.errors import CFLError, RadiusTooSmallError
from homogenize_lab.model import DynamicsSpec, LagrangianSpec, ModelSpec, PowerCost
from homogenize_lab.solve import GridSpec
from homogenize_lab.xform import (build_hamiltonian_table, effective_hamiltonian, hamiltonian,
                                  lagrangian_from_hamiltonian, solve_hjb)

PERIODIC = create_environment(EnvironmentSpec("periodic"), 7)


def model(dyn=None):
    return ModelSpec(dyn or DynamicsSpec("calculus_of_variations"), LagrangianSpec(PowerCost(2.0), env=PERIODIC))


def table(K=3.0, n=61):
    u = np.linspace(-K, K, n)
    vals = np.broadcast_to(0.5 * u ** 2, (2, 2, n)).copy()
    return EffectiveLagrangianTable(np.array([0.0, 1.0]), [np.array([-2.0, 2.0])], [u], vals,
                                    np.zeros_like(vals), np.zeros(vals.shape, bool))


@pytest.mark.parametrize("p, y", [(0.0, 0.1), (1.3, 0.25), (-2.0, 0.7)])
def test_hamiltonian_quadratic_closed_form(p, y):
    val, u, _ = hamiltonian(model(), 0.0, 0.0, y, p)
    assert val == pytest.approx(0.5 * p * p - (1 - np.cos(2 * np.pi * y)), abs=1e-9)
    assert float(np.ravel(u)[0]) == pytest.approx(-p, abs=1e-5)


@pytest.mark.parametrize("p", [0.4, -1.5, 3.0])
def test_hamiltonian_bounded_speed_against_scalar_search(p):
    m = model(DynamicsSpec("bounded_speed", C=2.0, delta=1.0))
    val, _, _ = hamiltonian(m, 0.0, 0.0, 0.0, p)
    res = optimize.minimize_scalar(lambda u: 2 * u / np.sqrt(u * u + 1) * p + 0.5 * u * u,
                                   bounds=(-20, 20), method="bounded", options={"xatol": 1e-12})
    assert val == pytest.approx(-res.fun, abs=1e-9)


def test_effective_hamiltonian_of_quadratic_table():
    for p in (0.0, 0.7, -1.9):
        val, u = effective_hamiltonian(table(), model(), 0.0, 0.0, p)
        assert val == pytest.approx(0.5 * p * p, abs=1e-9)


def test_effective_hamiltonian_edge_raises():
    with pytest.raises(RadiusTooSmallError):
        effective_hamiltonian(table(K=1.0, n=21), model(), 0.0, 0.0, 2.5)


def test_table_builder_and_slopes():
    h = build_hamiltonian_table(table(), model(), np.array([0.0, 1.0]), [np.array([-2.0, 2.0])],
                                [np.linspace(-2, 2, 41)])
    np.testing.assert_allclose(h.values[0, 0], 0.5 * np.linspace(-2, 2, 41) ** 2, atol=1e-9)
    assert h.slope_bounds()[0] == pytest.approx(1.95, abs=1e-9)


def test_discrete_legendre_dual():
    p = np.linspace(-4, 4, 801)
    v = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_allclose(lagrangian_from_hamiltonian(p, 0.5 * p ** 2, v), 0.5 * v ** 2, atol=1e-12)


def test_hjb_quadratic_terminal():
    # H = p^2/2, psi = x^2/2: V(t, x) = x^2 / (2 (1 + T - t))
    g = GridSpec(T=0.5, dt=1 / 512, box_lo=-1.0, box_hi=1.0, dx=1 / 128, control_radius=2.0)
    v = solve_hjb(lambda t, x, p: 0.5 * np.sum(p * p, axis=-1), g, lambda x: 0.5 * x[:, 0] ** 2, alpha=1.0)
    X = g.nodes()[:, 0]
    inner = np.abs(X) <= 0.5
    ref = X ** 2 / (2 * 1.5)
    assert np.max(np.abs(v.values[0] - ref)[inner]) <= 0.01


def test_hjb_cfl():
    g = GridSpec(T=0.5, dt=1 / 64, box_lo=-1.0, box_hi=1.0, dx=1 / 128, control_radius=2.0)
    with pytest.raises(CFLError) as err:
        solve_hjb(lambda t, x, p: 0.5 * np.sum(p * p, axis=-1), g, lambda x: 0 * x[:, 0], alpha=2.0)
    assert err.value.suggested_dt == pytest.approx(0.99 / 256)
