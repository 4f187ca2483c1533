"""Acceptance criteria 1-11. A `CRITERION n: PASS/FAIL` line per criterion is
printed in the terminal summary (see conftest.py)."""

import json
import time
from dataclasses import replace

import numpy as np
import pytest

from homogenize_lab.cell import (CellProblemSpec, F_ab, freeze_gap_bound, nonstationary_cell_cost,
                                 point_to_point_cost, subadditive_series)
from homogenize_lab.cli import shipped_config
from homogenize_lab.config import load_config
from homogenize_lab.env import EnvironmentSpec, create_environment, shift_environment
from homogenize_lab.io import load_hamiltonian_table, load_lagrangian_table, read_records
from homogenize_lab.model import (AbsTerminal, ClippedTimeSpaceMacro, DynamicsSpec, LagrangianSpec,
                                  ModelSpec, PowerCost, SmoothMacro, check_assumptions)
from homogenize_lab.solve import (CellCostArray, GridSpec, RepairParams, StepControl, evaluate_cost,
                                  repair_control, solve_fine, solve_homogenized, solve_macro)
from homogenize_lab.cell import EffectiveLagrangianTable
from oracles import effective_hamiltonian_1d, enumerate_lattice_paths, enumerate_node_paths

SHIPPED = ("trivial", "periodic1d", "shot_noise", "checkerboard")


def _total_time(out):
    return sum(json.loads((out / "timings.json").read_text()).values())


def _records(path):
    return [{k: float(v) for k, v in r.items()} for r in read_records(path)[1]]


def _envs():
    return [create_environment(EnvironmentSpec("periodic"), 7),
            create_environment(EnvironmentSpec("shot_noise"), 1),
            create_environment(EnvironmentSpec("checkerboard", amplitude_range=(0.0, 1.0)), 3)]


def _cov_model(env, macro=None, psi=None):
    lag = LagrangianSpec(PowerCost(2.0), env=env)
    if macro is not None:
        lag = replace(lag, macro=macro)
    if psi is not None:
        lag = replace(lag, psi=psi)
    return ModelSpec(DynamicsSpec("calculus_of_variations"), lag)


# -- 1 ------------------------------------------------------------------------


def test_criterion_1_oracle_equivalence():
    t0 = time.perf_counter()
    env = create_environment(EnvironmentSpec("periodic"), 7)
    m = _cov_model(env, ClippedTimeSpaceMacro(0.1, 1.0), AbsTerminal(2.0))
    dx, dt = 0.25, 0.125
    # three controls landing exactly on neighbouring nodes
    g = GridSpec(T=0.75, dt=dt, box_lo=-1.0, box_hi=1.0, dx=dx, control_radius=dx / dt, control_grid_n=3)
    X, U, eps = g.nodes(), g.controls(), 0.5
    pen = dt * m.L_upper(g.control_radius)
    psi = m.lagrangian.psi(X)

    vf = solve_fine(m, env, eps, g, check_resolution=False)
    pot = env.evaluate(X / eps)
    ell = m.lagrangian.running(U)
    stage = np.stack([dt * (m.lagrangian.macro(t, X)[:, None] + pot[:, None] + ell[None, :])
                      for t in g.times[:-1]])
    assert np.array_equal(enumerate_node_paths(len(X), [-1, 0, 1], stage, psi, pen), vf.values[0])

    rng = np.random.default_rng(0)
    g7 = GridSpec(T=0.75, dt=dt, box_lo=-1.0, box_hi=1.0, dx=dx, control_radius=3 * dx / dt, control_grid_n=7)
    costs = rng.uniform(0, 1, (6, 9, 7))
    vm = solve_macro(CellCostArray(costs), g7, m)
    ref = enumerate_node_paths(9, np.arange(-3, 4), costs, psi, dt * m.L_upper(g7.control_radius))
    assert np.array_equal(ref, vm.values[0])

    tab = EffectiveLagrangianTable(np.array([0.0, 0.75]), [np.array([-1.0, 0.0, 1.0])],
                                   [np.array([-2.0, 0.0, 2.0])], rng.uniform(0, 2, (2, 3, 3)),
                                   np.zeros((2, 3, 3)), np.zeros((2, 3, 3), bool))
    vh = solve_homogenized(tab, g, m)
    stage = np.stack([dt * tab(t, X[:, None, :], U[None, :, :]) for t in g.times[:-1]])
    assert np.array_equal(enumerate_node_paths(len(X), [-1, 0, 1], stage, psi, pen), vh.values[0])

    h, mdt, ks = 0.05, 0.1, np.arange(-3, 4)
    for envk in (env, create_environment(EnvironmentSpec("shot_noise"), 3)):
        mm = m.with_env(envk)
        mac = float(np.ravel(mm.lagrangian.macro(0.5, np.array([[0.2]])))[0])
        for ut in (0.25, -0.5):
            spec = CellProblemSpec(u_tilde=(ut,), horizon_b=0.6, micro_dt=mdt, micro_lattice=h,
                                   control_radius=1.5, tube_radius=None, y_start=(0.3,), t0=0.5, x0=(0.2,))
            r = point_to_point_cost(spec, mm, envk, tolerance=False)

            def step_cost(n, pos, c):
                k = ks[c]
                p = pos[:, 0]
                v0, v1, v2 = (envk.evaluate((0.3 + h * (p + s * k))[:, None]) for s in (0.0, 0.5, 1.0))
                return mdt * ((v0 + 4.0 * v1 + v2) / 6.0 + (mm.lagrangian.running((k * (h / mdt))[:, None]) + mac))

            tgt = np.rint(np.array([0.6 * ut]) / h).astype(int)
            assert enumerate_lattice_paths(np.array([0]), tgt, 6, ks[:, None], step_cost) == r.value
    assert time.perf_counter() - t0 < 10.0


# -- 2, 3 ---------------------------------------------------------------------


def test_criterion_2_trivial_homogenization(pipeline):
    out = pipeline("trivial")
    gaps = _records(out / "gaps.csv")
    assert sorted(r["eps"] for r in gaps) == [0.0625, 0.125, 0.25]
    assert max(r["sup_gap"] for r in gaps) <= 0.02
    assert _total_time(out) < 60.0


def test_criterion_3_periodic_trend(pipeline):
    out = pipeline("periodic1d")
    e = {r["eps"]: r["sup_gap"] for r in _records(out / "gaps.csv")}
    assert e[0.0625] < e[0.25]
    assert e[0.0625] <= 0.1
    assert _total_time(out) < 600.0


# -- 4 ------------------------------------------------------------------------


def test_criterion_4_subadditive_process():
    envs = _envs()
    rng = np.random.default_rng(0)
    for i in range(200):
        env = envs[i % len(envs)]
        m = _cov_model(env)
        # u multiple of lattice/micro_dt and a, b, l multiples of micro_dt: l*u is a lattice shift
        ut = 0.25 * int(rng.integers(-6, 7))
        a = 0.1 * int(rng.integers(0, 10))
        b = a + 0.1 * int(rng.integers(5, 25))
        l = 0.1 * int(rng.integers(1, 20))
        base = CellProblemSpec(u_tilde=(ut,), micro_dt=0.1, micro_lattice=0.025, control_radius=2.5,
                               y_start=(0.3,))
        lhs = F_ab(a + l, b + l, base, m, env).value
        rhs = F_ab(a, b, base, m, shift_environment(env, l * ut)).value
        assert abs(lhs - rhs) <= 1e-12, (i, a, b, l, ut)

        f1 = F_ab(0.0, b, base, m, env, tolerance=True)
        f2 = F_ab(b, b + l, base, m, env, tolerance=True)
        f3 = F_ab(0.0, b + l, base, m, env, tolerance=True)
        dp = max(f1.dp_tolerance, f2.dp_tolerance, f3.dp_tolerance)
        assert f3.value <= f1.value + f2.value + 2 * dp, (i, b, l, ut)
        lstar = float(m.L_star(np.array([[ut]]))[0])
        assert f1.value >= b * lstar - f1.dp_tolerance, (i, b, ut)


# -- 5 ------------------------------------------------------------------------


@pytest.mark.parametrize("env_index", [0, 1, 2])
def test_criterion_5_tau_homogeneity(env_index):
    env = _envs()[env_index]
    m = _cov_model(env)
    for ut in (0.5, 1.0, 2.0):
        base = CellProblemSpec(u_tilde=(ut,), micro_dt=0.1, micro_lattice=0.025, control_radius=3.0)
        sa, _ = subadditive_series(base, m, env, (25.0, 50.0, 100.0, 200.0), tolerance=True)
        sb, _ = subadditive_series(base, m, env, (50.0, 100.0, 200.0, 400.0), tolerance=True)
        lhs = abs(sb.f_values[-1] / 400.0 - sa.f_values[-1] / 200.0)
        # entry error of a table node: plateau spread plus the dp ratio
        bound = sa.plateau_error + sa.dp_ratio + sb.plateau_error + sb.dp_ratio
        assert lhs <= bound + 1e-12, (env.spec.kind, ut, lhs, bound)


def test_criterion_5_seed_self_averaging(pipeline):
    out = pipeline("shot_noise")
    rows = _records(out / "seed_discrepancy.csv")
    assert rows
    assert max(r["rel_diff"] for r in rows) <= 0.05
    assert "relative diff" in (out / "report.md").read_text()


# -- 6 ------------------------------------------------------------------------


@pytest.mark.parametrize("name", SHIPPED)
def test_criterion_6_table_coercivity(pipeline, name):
    out = pipeline(name)
    cfg = load_config(shipped_config(f"{name}.toml"))
    for seed in cfg.seeds:
        model = cfg.build_model(seed)
        table = load_lagrangian_table(out / f"table_seed{seed}.csv")
        U = table.u_points()
        lstar = model.L_star(U).reshape([a.size for a in table.u_axes])
        ok = ~table.infeasible
        lower = lstar[(None,) * (1 + table.dimension)] - table.errors
        assert np.all(table.values[ok] >= lower[ok])
        assert ok.all()


# -- 7 ------------------------------------------------------------------------


def test_criterion_7_repair():
    env = create_environment(EnvironmentSpec("periodic"), 7)
    m = ModelSpec(DynamicsSpec("bounded_speed", C=2.0, delta=1.0), LagrangianSpec(PowerCost(2.0), env=env))
    rng = np.random.default_rng(1)
    R = 200.0

    def disp(c):
        return float(np.sum(np.diff(c.breakpoints) * m.dynamics.f(np.zeros(1), c.values)[:, 0]))

    for _ in range(100):
        n = int(rng.integers(8, 20))
        lens = rng.uniform(0.5, 1.5, n)
        vals = rng.uniform(-2, 2, n)
        k = int(rng.integers(1, 4))
        idx = rng.choice(n, k, replace=False)
        vals[idx] = rng.choice([-1, 1], k) * rng.uniform(500, 1500, k)
        lens[idx] = rng.uniform(0.5e-6, 2e-6, k)
        br = np.concatenate([[0.0], np.cumsum(lens)])
        u = StepControl(br / br[-1], vals)
        res = repair_control(m, env, u, RepairParams(R=R))
        assert abs(disp(u) - disp(res.control)) <= 0.0125
        assert res.control.sup_norm() <= R
        c0 = evaluate_cost(m, env, 1.0, 0.0, 0.0, u, micro_dt=1e-2, T=1.0, terminal=False)
        c1 = evaluate_cost(m, env, 1.0, 0.0, 0.0, res.control, micro_dt=1e-2, T=1.0, terminal=False)
        assert c1 - c0 <= 1e-9
        assert res.iterations <= res.offending


# -- 8 ------------------------------------------------------------------------


def test_criterion_8_freeze_gap():
    env = create_environment(EnvironmentSpec("periodic"), 7)
    m = _cov_model(env, SmoothMacro(a=0.5, b=0.5, freq=2.0))
    eps, K = 0.01, 3.0
    for ut in (0.5, 1.0, -1.5):
        gaps = []
        for tau in (0.2, 0.1, 0.05):
            spec = CellProblemSpec(u_tilde=(ut,), horizon_b=tau / eps, t0=0.3, x0=(0.4,), control_radius=K,
                                   micro_dt=0.05, micro_lattice=0.0125)
            frozen = point_to_point_cost(spec, m, env, tolerance=True)
            moving = nonstationary_cell_cost(spec, m, env, eps)
            gap = abs(moving.value - eps * frozen.value)
            assert gap <= freeze_gap_bound(m, K, tau) + 3 * eps * frozen.dp_tolerance
            gaps.append(gap)
        assert all(g1 <= 0.75 * g0 for g0, g1 in zip(gaps, gaps[1:]))


# -- 9 ------------------------------------------------------------------------


def test_criterion_9_hjb_consistency(pipeline):
    out = pipeline("periodic1d")
    assert _records(out / "hjb_gap.csv")[0]["sup_gap"] <= 0.05
    h = load_hamiltonian_table(out / "hamiltonian.csv")
    for p in (0.0, 0.5, -0.5, 1.0, -1.0, 2.0, -2.0):
        got = float(h(0.0, np.array([[0.0]]), np.array([[p]]))[0])
        ref = effective_hamiltonian_1d(p)
        assert abs(got - ref) / max(abs(ref), 1.0) <= 5e-2, (p, got, ref)


# -- 10 -----------------------------------------------------------------------


def test_criterion_10_bounded_speed():
    dyn = DynamicsSpec("bounded_speed", C=2.0, delta=1.0)
    rng = np.random.default_rng(5)
    u = rng.normal(scale=3.0, size=(10_000, 1))
    v = dyn.f(np.zeros(1), u)
    assert np.all(np.abs(v) < dyn.C)
    small = u[np.abs(u[:, 0]) <= 5.0]
    back = dyn.invert_dynamics(np.zeros(1), small, dyn.f(np.zeros(1), small))
    assert np.max(np.abs(back - small)) <= 1e-12

    env = create_environment(EnvironmentSpec("periodic"), 7)
    details = {}
    for beta in (2.0, 0.5):
        m = ModelSpec(dyn, LagrangianSpec(PowerCost(beta), env=env))
        details[beta] = check_assumptions(m)[7].detail
    assert "part2 pass" in details[2.0]
    assert "part2 fail" in details[0.5]


# -- 11 -----------------------------------------------------------------------

VOLATILE = {"report.md", "timings.json", "manifest.json"}


@pytest.mark.parametrize("name", ["trivial", "periodic1d"])
def test_criterion_11_determinism(pipeline, name):
    dirs = [pipeline(name, w) for w in (1, 4, 8)]
    files = sorted(p.name for p in dirs[0].iterdir() if p.name not in VOLATILE)
    assert any(f.endswith(".png") for f in files) and any(f.endswith(".csv") for f in files)
    for d in dirs[1:]:
        assert sorted(p.name for p in d.iterdir() if p.name not in VOLATILE) == files
        for f in files:
            assert (d / f).read_bytes() == (dirs[0] / f).read_bytes(), f
    # the report differs only in the timing table
    reports = [(d / "report.md").read_text().split("## Wall clock")[0] for d in dirs]
    assert reports[0] == reports[1] == reports[2]
