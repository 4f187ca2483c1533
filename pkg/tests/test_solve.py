import numpy as np
import pytest

from homogenize_lab.cell import EffectiveLagrangianTable
from homogenize_lab.env import EnvironmentSpec, create_environment
from homogenize_lab.errors import ConfigError, ModelContractError, ThresholdError
from homogenize_lab.model import (AbsTerminal, DynamicsSpec, LagrangianSpec, ModelSpec, PowerCost,
                                  SmoothMacro)
from homogenize_lab.solve import (GridSpec, RepairParams, StepControl, approximate_by_step_control,
                                  evaluate_cost, repair_control, solve_fine, solve_homogenized)
from oracles import hopf_lax_abs

FLAT = create_environment(EnvironmentSpec("periodic", amplitude_range=(0.0, 0.0)), 0)
PERIODIC = create_environment(EnvironmentSpec("periodic"), 7)


def abs_model(env=FLAT):
    return ModelSpec(DynamicsSpec("calculus_of_variations"),
                     LagrangianSpec(PowerCost(2.0), env=env, psi=AbsTerminal(1.0)), T=0.5)


def quadratic_table(K=3.0, n=61):
    u = np.linspace(-K, K, n)
    vals = np.broadcast_to(0.5 * u ** 2, (2, 2, n)).copy()
    return EffectiveLagrangianTable(np.array([0.0, 1.0]), [np.array([-2.0, 2.0])], [u], vals,
                                    np.zeros_like(vals), np.zeros(vals.shape, bool))


def grid(dx=1 / 32, dt=1 / 128):
    return GridSpec(T=0.5, dt=dt, box_lo=-1.0, box_hi=1.0, dx=dx, control_radius=3.0, control_grid_n=61)


def test_homogenized_matches_hopf_lax():
    g = grid()
    v = solve_homogenized(quadratic_table(), g, abs_model())
    X = g.nodes()[:, 0]
    inner = np.abs(X) <= 0.5
    ref = np.array([hopf_lax_abs(x, 0.5) for x in X])
    assert np.max(np.abs(v.values[0] - ref)[inner]) <= 0.02
    assert v.policy is not None and v.values.shape == (g.n_steps + 1, X.size)


def test_fine_in_flat_medium_equals_homogenized():
    g = grid()
    a = solve_fine(abs_model(), FLAT, 0.25, g, check_resolution=False)
    b = solve_homogenized(quadratic_table(), g, abs_model())
    assert a.sup_gap(b) <= 1e-9


def test_value_field_interpolates_nodes():
    g = grid()
    v = solve_homogenized(quadratic_table(), g, abs_model())
    X = g.nodes()
    np.testing.assert_allclose(v.at(0, X), v.values[0], atol=1e-14)


@pytest.mark.parametrize("kw, field", [
    (dict(dx=0.3), "grids.dx"),
    (dict(dt=0.0), "grids.dt"),
    (dict(control_grid_n=1), "grids.control_grid_n"),
])
def test_grid_validation(kw, field):
    base = dict(T=0.5, dt=1 / 64, box_lo=-1.0, box_hi=1.0, dx=1 / 32, control_radius=3.0)
    base.update(kw)
    with pytest.raises(ConfigError) as err:
        GridSpec(**base)
    assert err.value.field == field


def test_step_approximation_oscillation():
    m = abs_model()
    u = approximate_by_step_control(m, lambda s: np.sin(8 * s), kappa=0.05, T=1.0)
    s = np.linspace(0, 1, 2001)
    for a, b in zip(u.breakpoints[:-1], u.breakpoints[1:]):
        seg = np.sin(8 * s[(s >= a) & (s <= b)])
        if seg.size:
            assert np.max(seg) - np.min(seg) <= 0.05 + 1e-9
    assert approximate_by_step_control(m, u, 0.1) is u


def test_step_control_validation():
    with pytest.raises(ValueError):
        StepControl([0.0, 1.0, 0.5], [1.0, 2.0])
    with pytest.raises(ValueError):
        StepControl([0.0, 1.0], [1.0, 2.0])


def test_evaluate_cost_constant_control():
    m = abs_model()
    u = StepControl([0.0, 0.5], [1.2])
    c = evaluate_cost(m, FLAT, 1.0, 0.0, 0.1, u, micro_dt=1e-3, T=0.5)
    assert c == pytest.approx(0.5 * 0.5 * 1.44 + abs(0.1 + 0.6), abs=1e-9)


def test_evaluate_cost_potential_average():
    # u = 1 through V(y) = 1 - cos(2 pi y) over one full period costs 1 + 1/2
    m = ModelSpec(DynamicsSpec("calculus_of_variations"), LagrangianSpec(PowerCost(2.0), env=PERIODIC), T=1.0)
    c = evaluate_cost(m, PERIODIC, 1.0, 0.0, 0.0, StepControl([0.0, 1.0], [1.0]), micro_dt=1e-3, T=1.0,
                      terminal=False)
    assert c == pytest.approx(1.5, abs=1e-6)


def test_repair_leaves_tame_controls_alone():
    m = ModelSpec(DynamicsSpec("bounded_speed", C=2.0, delta=1.0), LagrangianSpec(PowerCost(2.0), env=PERIODIC))
    u = StepControl([0.0, 0.3, 0.7, 1.0], [0.5, -1.0, 2.0])
    res = repair_control(m, PERIODIC, u, RepairParams(R=50.0))
    assert res.offending == 0 and res.iterations == 0
    assert np.array_equal(res.control.values, u.values)


def test_fine_solver_checks_resolution():
    m = ModelSpec(DynamicsSpec("calculus_of_variations"),
                  LagrangianSpec(PowerCost(2.0), SmoothMacro(), env=PERIODIC), T=0.5)
    with pytest.raises(ConfigError):
        solve_fine(m, PERIODIC, 0.01, grid(), check_resolution=True)


def test_repair_threshold_and_contract():
    m = ModelSpec(DynamicsSpec("bounded_speed", C=2.0, delta=1.0), LagrangianSpec(PowerCost(2.0), env=PERIODIC))
    spiky = StepControl([0.0, 0.5, 0.500001, 1.0], [0.5, 900.0, 0.5])
    with pytest.raises(ThresholdError):
        repair_control(m, PERIODIC, spiky, RepairParams(R=1.0), micro_dt=1e-2)
    dyn = DynamicsSpec.from_function(lambda x, u: (1.0 + 0.2 * x) * u, np.linspace(-1, 1, 5),
                                     np.linspace(-3, 3, 61), eta_decl=1.0, lip_H_decl=1.25, M_tilde_decl=0.0)
    with pytest.raises(ModelContractError):
        repair_control(ModelSpec(dyn, LagrangianSpec(PowerCost(2.0), env=PERIODIC)), PERIODIC, spiky,
                       RepairParams(R=50.0))
