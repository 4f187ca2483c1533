"""Frozen-coefficient cell problems on a space-time lattice.

The fast variable lives on the lattice ``y_start + h Z^d`` and time on
``dt Z``. Admissible velocities are the lattice steps ``k h / dt`` with speed at
most ``f^*(K)``; each is realized by the smallest control of norm <= K. The
stage cost of a step from node ``s`` with step ``k`` is

    dt * (l(u_k) + m(t0, x0) + Simpson average of V along the segment),

with V sampled on the half lattice. Because start and end nodes of ``F_{a,b}``
are ``round(a vbar / h)`` and ``round(b vbar / h)`` on one global lattice,
concatenating the minimizers of ``F_{a,b}`` and ``F_{b,l}`` is admissible for
``F_{a,l}`` and subadditivity holds without discretization slack.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._interp import multilinear
from .env import as_points, evaluate_potential
from .errors import ConfigError, DomainError, InfeasibleError

DEFAULT_SCHEDULE = (12.5, 25.0, 50.0, 100.0, 200.0)
_GRID_TOL = 1e-9


@dataclass(frozen=True)
class CellProblemSpec:
    """One cell problem ``F_{0,b}`` in rescaled (fast) units.

    ``tube_radius`` confines the fast path to a tube around the straight line
    (None disables it); ``control_grid_n`` optionally caps the number of
    lattice velocities per axis.
    """

    u_tilde: tuple
    horizon_b: float = 50.0
    t0: float = 0.0
    x0: tuple = (0.0,)
    micro_dt: float = 0.05
    micro_lattice: float = 0.0125
    control_radius: float = 4.0
    control_grid_n: int | None = None
    y_start: tuple | None = None
    tube_radius: float | None = 2.0
    endpoint_mode: str = "hard"
    penalty_weight: float = 1e3
    auto_expand: int = 3

    def __post_init__(self):
        u = tuple(float(v) for v in np.atleast_1d(self.u_tilde))
        x = tuple(float(v) for v in np.atleast_1d(self.x0))
        object.__setattr__(self, "u_tilde", u)
        object.__setattr__(self, "x0", x)
        if self.y_start is None:
            object.__setattr__(self, "y_start", (0.0,) * len(u))
        else:
            object.__setattr__(self, "y_start", tuple(float(v) for v in np.atleast_1d(self.y_start)))
        if len(x) != len(u) or len(self.y_start) != len(u):
            raise ConfigError("u_tilde, x0 and y_start must share a dimension", "cell.u_tilde")
        if not self.micro_dt > 0:
            raise ConfigError("must be > 0", "cell.micro_dt")
        if not self.micro_lattice > 0:
            raise ConfigError("must be > 0", "cell.micro_lattice")
        if not self.control_radius >= math.sqrt(sum(v * v for v in u)):
            raise ConfigError("control_radius must be >= |u_tilde|", "cell.control_radius")
        if not self.horizon_b >= self.micro_dt:
            raise ConfigError("horizon_b must be >= micro_dt", "cell.horizon_b")
        if self.endpoint_mode not in ("hard", "penalty"):
            raise ConfigError("expected 'hard' or 'penalty'", "cell.endpoint_mode")
        if self.tube_radius is not None and not self.tube_radius > 0:
            raise ConfigError("must be > 0 or omitted", "cell.tube_radius")

    @property
    def dimension(self):
        return len(self.u_tilde)

    def refined(self):
        return replace(self, micro_dt=self.micro_dt / 2, micro_lattice=self.micro_lattice / 2)


@dataclass
class CellResult:
    """Value of one cell problem with diagnostics."""

    value: float
    endpoint_residual: float
    argmin_path: np.ndarray | None
    dp_tolerance: float = 0.0
    duration: float = 0.0
    tube_touched: bool = False
    tube_radius: float | None = None

    def to_dict(self, with_path=False):
        d = {"value": self.value, "endpoint_residual": self.endpoint_residual,
             "dp_tolerance": self.dp_tolerance, "duration": self.duration,
             "tube_touched": self.tube_touched, "tube_radius": self.tube_radius}
        if with_path and self.argmin_path is not None:
            d["argmin_path"] = self.argmin_path.tolist()
        return d


@dataclass
class SubadditiveSeries:
    """Samples ``(b, F_{0,b})`` and the plateau estimate of ``lim F/b``."""

    b_values: np.ndarray
    f_values: np.ndarray
    ratios: np.ndarray
    plateau_estimate: float
    plateau_error: float
    dp_tolerance: np.ndarray
    warning: bool = False

    @property
    def dp_ratio(self):
        return float(np.max(self.dp_tolerance / self.b_values))

    def to_rows(self):
        return [{"b": float(b), "F": float(f), "ratio": float(r), "dp_tolerance": float(t)}
                for b, f, r, t in zip(self.b_values, self.f_values, self.ratios, self.dp_tolerance)]


# ----------------------------------------------------------------------------
# lattice construction


def _steps(t, dt):
    n = t / dt
    k = round(n)
    if abs(n - k) > _GRID_TOL * max(1.0, abs(n)):
        raise ConfigError(f"time {t} is not a multiple of micro_dt {dt}", "cell.horizon_b")
    return int(k)


def velocity_set(spec, model, x=None):
    """Lattice steps ``k`` (n, d), their velocities and the realizing controls.

    Ordered lexicographically in ``k`` so that argmin ties go to the lowest
    index.
    """
    d = spec.dimension
    h, dt = spec.micro_lattice, spec.micro_dt
    vmax = model.dynamics.f_star(spec.control_radius)
    kmax = int(math.floor(vmax * dt / h * (1 + 1e-12)))
    if spec.control_grid_n is not None:
        kmax = min(kmax, (int(spec.control_grid_n) - 1) // 2)
    rng = range(-kmax, kmax + 1)
    ks = np.array(list(itertools.product(rng, repeat=d)), dtype=np.int64).reshape(-1, d)
    vel = ks * (h / dt)
    keep = np.sqrt(np.sum(vel * vel, axis=-1)) <= vmax * (1 + 1e-12)
    ks, vel = ks[keep], vel[keep]
    x = np.asarray(spec.x0 if x is None else x, dtype=float)
    ctrl = model.dynamics.control_for_velocity(x, vel, spec.control_radius)
    ok = ~np.any(np.isnan(ctrl), axis=-1)
    return ks[ok], vel[ok], ctrl[ok], kmax


@dataclass
class _Plan:
    d: int
    h: float
    dt: float
    ks: np.ndarray
    controls: np.ndarray
    kmax: int
    start: np.ndarray
    targets: list          # (n_steps, target index) per requested horizon
    windows: list          # per step (lo, hi) arrays, inclusive
    tube_bounds: list      # per step (lo, hi) or None
    box_lo: np.ndarray
    box_hi: np.ndarray

    @property
    def box_shape(self):
        return tuple(int(v) for v in self.box_hi - self.box_lo + 1)


def _plan(spec, model, a, b_list, tube_radius):
    d = spec.dimension
    h, dt = spec.micro_lattice, spec.micro_dt
    ks, vel, ctrl, kmax = velocity_set(spec, model)
    if ks.shape[0] == 0:
        raise InfeasibleError("no lattice velocity is realizable within the control radius")
    vbar = model.dynamics.f(np.asarray(spec.x0), np.asarray(spec.u_tilde))
    vbar = np.asarray(vbar, dtype=float).reshape(d)
    n_a = _steps(a, dt)
    start = np.rint(a * vbar / h).astype(np.int64)
    targets = []
    for b in b_list:
        n = _steps(b, dt) - n_a
        if n <= 0:
            raise ConfigError("need b > a", "cell.horizon_b")
        tgt = np.rint(b * vbar / h).astype(np.int64)
        if np.any(np.abs(tgt - start) > n * kmax):
            raise InfeasibleError(
                f"endpoint displacement {((tgt - start) * h).tolist()} not reachable in {n} steps "
                f"with lattice speed <= {kmax * h / dt:.6g} (control radius {spec.control_radius})")
        targets.append((n, tgt))
    n_total = max(n for n, _ in targets)
    hard = spec.endpoint_mode == "hard"
    windows, tubes = [], []
    for n in range(n_total + 1):
        lo = start - n * kmax
        hi = start + n * kmax
        if hard:
            rem = [(m, t) for m, t in targets if m >= n]
            blo = np.min([t - (m - n) * kmax for m, t in rem], axis=0)
            bhi = np.max([t + (m - n) * kmax for m, t in rem], axis=0)
            lo, hi = np.maximum(lo, blo), np.minimum(hi, bhi)
        if tube_radius is not None:
            center = start + n * dt * vbar / h
            r = tube_radius / h
            tlo = np.floor(center - r).astype(np.int64)
            thi = np.ceil(center + r).astype(np.int64)
            tubes.append((tlo, thi))
            lo, hi = np.maximum(lo, tlo), np.minimum(hi, thi)
        else:
            tubes.append(None)
        if np.any(lo > hi):
            raise InfeasibleError(f"empty admissible window at step {n}; tube radius "
                                  f"{tube_radius} too small for the lattice")
        windows.append((lo, hi))
    box_lo = np.min([w[0] for w in windows], axis=0) - kmax
    box_hi = np.max([w[1] for w in windows], axis=0) + kmax
    return _Plan(d, h, dt, ks, ctrl, kmax, start, targets, windows, tubes, box_lo, box_hi)


def _half_lattice_potential(plan, spec, model, env):
    """V on the half lattice covering the box, indexed by 2*(s - box_lo) + offset."""
    shape = tuple(2 * s - 1 for s in plan.box_shape)
    axes = [spec.y_start[a] + plan.h * (plan.box_lo[a] + 0.5 * np.arange(shape[a]))
            for a in range(plan.d)]
    if env is None:
        return np.zeros(shape)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return evaluate_potential(env, mesh)


def _micro_stage(plan, spec, model, env):
    """Simpson average of V for every (control, source) pair, flattened over the box.

    Sources near the box edge whose segment leaves the box get +inf; the DP
    windows never use them.
    """
    Vh = _half_lattice_potential(plan, spec, model, env)
    shape = plan.box_shape
    size = int(np.prod(shape))
    out = np.full((plan.ks.shape[0], size), np.inf)
    src = np.stack(np.meshgrid(*[np.arange(s) for s in shape], indexing="ij"), axis=-1).reshape(-1, plan.d)
    hshape = np.array(Vh.shape)
    for c, k in enumerate(plan.ks):
        p0 = 2 * src
        p1 = p0 + k
        p2 = p0 + 2 * k
        ok = np.all((p2 >= 0) & (p2 < hshape), axis=-1)
        v0 = Vh[tuple(p0[ok].T)]
        v1 = Vh[tuple(p1[ok].T)]
        v2 = Vh[tuple(p2[ok].T)]
        out[c, ok] = (v0 + 4.0 * v1 + v2) / 6.0
    return out


def _strides(shape):
    st = np.ones(len(shape), dtype=np.int64)
    for a in range(len(shape) - 2, -1, -1):
        st[a] = st[a + 1] * shape[a + 1]
    return st


def _window_flat(plan, lo, hi, strides):
    rel = [np.arange(lo[a], hi[a] + 1) - plan.box_lo[a] for a in range(plan.d)]
    mesh = np.meshgrid(*rel, indexing="ij")
    return sum(m.astype(np.int64) * strides[a] for a, m in enumerate(mesh)).ravel()


def _run_dp(plan, stage, step_extra=None):
    """Forward DP over the plan's windows.

    ``stage`` has shape (n_controls, box_size); ``step_extra(n)`` optionally
    returns a per-source additive cost (box_size,) for step n. Returns the
    value array at each target step and back-pointers.
    """
    shape = plan.box_shape
    strides = _strides(shape)
    size = int(np.prod(shape))
    koff = plan.ks @ strides
    cidx = np.arange(plan.ks.shape[0])
    val = np.full(size, np.inf)
    w0 = _window_flat(plan, *plan.windows[0], strides)
    val[w0] = 0.0
    prev_w = w0
    back = []
    finals = {}
    want = {n for n, _ in plan.targets}
    if 0 in want:
        finals[0] = val.copy()
    n_total = len(plan.windows) - 1
    for n in range(n_total):
        src_val = val if step_extra is None else val + step_extra(n)
        w = _window_flat(plan, *plan.windows[n + 1], strides)
        src = w[:, None] - koff[None, :]
        cand = src_val[src] + stage[cidx[None, :], src]
        arg = np.argmin(cand, axis=1)
        best = cand[np.arange(w.size), arg]
        val[prev_w] = np.inf
        val[w] = best
        prev_w = w
        back.append(arg.astype(np.int32))
        if n + 1 in want:
            finals[n + 1] = val.copy()
    return finals, back


def _trace(plan, back, n_end, idx_end):
    """Reconstruct (step, lattice index, control index) back from a final node."""
    path_idx = [np.asarray(idx_end, dtype=np.int64)]
    ctrl = []
    cur = np.asarray(idx_end, dtype=np.int64)
    for n in range(n_end, 0, -1):
        lo, hi = plan.windows[n]
        wshape = hi - lo + 1
        rel = cur - lo
        flat = int(np.ravel_multi_index(tuple(rel), tuple(wshape)))
        c = int(back[n - 1][flat])
        ctrl.append(c)
        cur = cur - plan.ks[c]
        path_idx.append(cur)
    path_idx.reverse()
    ctrl.reverse()
    return np.array(path_idx), np.array(ctrl)


def _touches_tube(plan, idx_path):
    for n, idx in enumerate(idx_path):
        tb = plan.tube_bounds[n]
        if tb is None:
            return False
        lo, hi = plan.windows[n]
        tlo, thi = tb
        # only count contacts where the tube, not reachability, is the binding bound
        if np.any((idx == lo) & (lo == tlo) & (idx != plan.start)) or np.any((idx == hi) & (hi == thi) & (idx != plan.start)):
            return True
    return False


def _solve_once(spec, model, env, a, b_list, tube, step_extra_factory, stage_override):
    plan = _plan(spec, model, a, b_list, tube)
    if stage_override is not None:
        stage = stage_override(plan)
    else:
        micro = _micro_stage(plan, spec, model, env)
        const = model.lagrangian.running(plan.controls) + float(
            np.ravel(model.lagrangian.macro(spec.t0, np.asarray(spec.x0)[None, :]))[0])
        stage = plan.dt * (micro + const[:, None])
    extra = step_extra_factory(plan) if step_extra_factory is not None else None
    finals, back = _run_dp(plan, stage, extra)
    results = []
    touched = False
    strides = _strides(plan.box_shape)
    vbar = np.asarray(model.dynamics.f(np.asarray(spec.x0), np.asarray(spec.u_tilde))).reshape(-1)
    for (n, tgt), b in zip(plan.targets, b_list):
        val = finals[n]
        if spec.endpoint_mode == "hard":
            end = tgt
            value = float(val[int((tgt - plan.box_lo) @ strides)])
        else:
            lo, hi = plan.windows[n]
            wf = _window_flat(plan, lo, hi, strides)
            rel = np.stack(np.unravel_index(wf, plan.box_shape), -1) + plan.box_lo
            tot = val[wf] + spec.penalty_weight * np.sum(((rel - tgt) * plan.h) ** 2, axis=-1)
            j = int(np.argmin(tot))
            end = rel[j]
            value = float(tot[j])
        if not math.isfinite(value):
            raise InfeasibleError(f"no admissible lattice path reaches the endpoint for b = {b}")
        idx_path, cidx = _trace(plan, back, n, end)
        touched = touched or _touches_tube(plan, idx_path)
        true_end = np.asarray(spec.y_start) + b * vbar
        resid = float(np.linalg.norm(np.asarray(spec.y_start) + end * plan.h - true_end))
        times = a + plan.dt * np.arange(n + 1)
        ys = np.asarray(spec.y_start) + idx_path * plan.h
        us = np.vstack([plan.controls[cidx], np.full((1, plan.d), np.nan)])
        results.append(CellResult(value, resid, np.column_stack([times, ys, us]),
                                  duration=n * plan.dt, tube_radius=tube))
    return results, plan, touched


def _solve_series(spec, model, env, a, b_list, step_extra_factory=None, stage_override=None):
    """One forward pass for all horizons; returns (list of CellResult, plan).

    If a minimizing path touches the tube, the radius is doubled until the
    values stop changing (ties between equally cheap paths can keep touching
    the tube without the tube ever binding the value).
    """
    tube = spec.tube_radius
    results, plan, touched = _solve_once(spec, model, env, a, b_list, tube,
                                         step_extra_factory, stage_override)
    for _ in range(spec.auto_expand):
        if not touched or tube is None:
            break
        wider, wplan, wtouched = _solve_once(spec, model, env, a, b_list, 2.0 * tube,
                                             step_extra_factory, stage_override)
        stable = all(abs(r.value - w.value) <= 1e-12 * max(1.0, abs(r.value))
                     for r, w in zip(results, wider))
        if stable:
            break
        results, plan, touched, tube = wider, wplan, wtouched, 2.0 * tube
    for r in results:
        r.tube_touched = touched
    return results, plan


def _snap_term(spec, model):
    """Cost change from snapping the endpoint onto the lattice (at most h/2 per axis)."""
    u = float(np.linalg.norm(spec.u_tilde))
    R = min(spec.control_radius, u + 0.25)
    dyn = model.dynamics
    lip = model.lip_L_u(R) * dyn.lip_H(R)
    return 0.5 * spec.micro_lattice * math.sqrt(spec.dimension) * lip


# ----------------------------------------------------------------------------
# public operations


def F_ab(a, b, base, model, env=None, tolerance=False):
    """``F_{a,b}``: cost from ``y_start + a vbar`` to ``y_start + b vbar`` over ``b - a``."""
    if not 0 <= a < b:
        raise ConfigError(f"need 0 <= a < b, got a={a}, b={b}", "cell.horizon_b")
    env = model.env if env is None else env
    (res,), _ = _solve_series(base, model, env, a, [b])
    if tolerance:
        (ref,), _ = _solve_series(base.refined(), model, env, a, [b])
        res.dp_tolerance = abs(res.value - ref.value) + _snap_term(base, model)
    return res


def point_to_point_cost(spec, model, env=None, tolerance=True):
    """``F_{0,b}`` for ``b = spec.horizon_b`` with an optional Richardson tolerance."""
    return F_ab(0.0, spec.horizon_b, spec, model, env, tolerance)


def subadditive_series(base, model, env=None, b_schedule=DEFAULT_SCHEDULE, tolerance=True):
    """``F_{0,b}`` for every b of the schedule from one forward pass."""
    b_schedule = np.asarray(sorted(float(b) for b in b_schedule))
    env = model.env if env is None else env
    res, _ = _solve_series(base, model, env, 0.0, list(b_schedule))
    f = np.array([r.value for r in res])
    dp = np.zeros_like(f)
    if tolerance:
        few = list(b_schedule[:2])
        ref, _ = _solve_series(base.refined(), model, env, 0.0, few)
        ratio = max(abs(r.value - q.value) / b for r, q, b in zip(res, ref, few))
        dp = ratio * b_schedule + _snap_term(base, model)
    for r, t in zip(res, dp):
        r.dp_tolerance = float(t)
    return _series(b_schedule, f, dp), res


def _series(b, f, dp):
    ratios = f / b
    q = max(2, int(math.ceil(len(b) / 4)))
    tail = ratios[-q:]
    est = float(np.mean(tail))
    err = 0.5 * float(np.max(tail) - np.min(tail))
    # relative 1e-9 floor so rounding alone never warns when dp is not estimated
    tol = dp / b + 1e-9 * np.maximum(1.0, np.abs(ratios))
    warn = bool(np.any(np.diff(ratios) > tol[1:] + tol[:-1]))
    return SubadditiveSeries(b, f, ratios, est, err, dp, warn)


@dataclass
class EffectiveEstimate:
    value: float
    error: float
    series: SubadditiveSeries

    @property
    def warning(self):
        return self.series.warning


def estimate_effective_lagrangian(base, model, env=None, b_schedule=DEFAULT_SCHEDULE, tolerance=True):
    """Plateau estimate of ``lim F_{0,b}/b`` with its empirical error bar."""
    if len(b_schedule) < 4:
        raise ConfigError("need at least 4 horizons", "sweep.b_schedule")
    if np.any(np.diff(np.asarray(b_schedule, dtype=float)) <= 0):
        raise ConfigError("must be strictly increasing", "sweep.b_schedule")
    series, _ = subadditive_series(base, model, env, b_schedule, tolerance)
    return EffectiveEstimate(series.plateau_estimate, series.plateau_error, series)


def cell_cost(spec, model, env=None, eps=1.0):
    """Frozen ``L_{tau,eps} = eps F_{0, tau/eps}`` (spec.horizon_b = tau/eps)."""
    res = point_to_point_cost(spec, model, env, tolerance=False)
    return replace(res, value=eps * res.value)


def nonstationary_cell_cost(spec, model, env=None, eps=1.0):
    """Unfrozen cost: the slow state ``x = x0 + eps (y - y_start)`` moves with the path.

    Controls realizing each lattice velocity are recomputed at the current
    slow position and the macro term is evaluated at ``(t0 + eps s, x)``.
    Returns the eps-scaled value.

    Raises:
        DomainError: if ``tau f^*(K) > eta(K)``.
    """
    env = model.env if env is None else env
    dyn = model.dynamics
    K = spec.control_radius
    tau = eps * spec.horizon_b
    if tau * dyn.f_star(K) > dyn.eta(K):
        raise DomainError(f"tau f*(K) = {tau * dyn.f_star(K):.6g} exceeds eta(K) = {dyn.eta(K):.6g}")
    x0 = np.asarray(spec.x0)

    def slow(plan):
        axes = [plan.box_lo[a] + np.arange(plan.box_shape[a]) for a in range(plan.d)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, plan.d)
        return x0 + eps * mesh * plan.h

    def stage(plan):
        micro = _micro_stage(plan, spec, model, env)
        xs = slow(plan)
        vel = plan.ks * (plan.h / plan.dt)
        if dyn.kind == "user_table":
            ell = np.empty(micro.shape)
            for i, x in enumerate(xs):
                u = dyn.control_for_velocity(x, vel, K)
                ell[:, i] = model.lagrangian.running(u)
        else:
            ell = np.broadcast_to(model.lagrangian.running(plan.controls)[:, None], micro.shape)
        ell = np.where(np.isnan(ell), np.inf, ell)
        return plan.dt * (micro + ell)

    def extra_factory(plan):
        xs = slow(plan)

        def extra(n):
            t = spec.t0 + eps * n * plan.dt
            return plan.dt * model.lagrangian.macro(t, xs)
        return extra

    (res,), _ = _solve_series(spec, model, env, 0.0, [spec.horizon_b],
                              step_extra_factory=extra_factory, stage_override=stage)
    return replace(res, value=eps * res.value)


def freeze_gap_bound(model, K, tau):
    """Bound on ``|L_{tau,eps} - Lhat_{tau,eps}|`` from the model constants."""
    dyn = model.dynamics
    eta = min(dyn.eta(K), dyn.lip_H(K) * tau * dyn.f_star(K) if math.isfinite(dyn.eta(K)) else math.inf)
    R = K + (eta if math.isfinite(eta) else 0.0)
    fK = dyn.f_star(K)
    return (tau ** 2 * (model.lip_L_t() + fK * model.lip_L_u(R) * dyn.lip_H(R))
            + tau * float(model.m_L(tau * fK)))


# ----------------------------------------------------------------------------
# effective Lagrangian table


@dataclass
class EffectiveLagrangianTable:
    """Lattice of effective Lagrangian estimates over (t, x, u).

    ``values`` has shape ``(n_t, *x_shape, *u_shape)``; NaN marks infeasible
    nodes (also flagged in ``infeasible``).
    """

    t_axis: np.ndarray
    x_axes: list
    u_axes: list
    values: np.ndarray
    errors: np.ndarray
    infeasible: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def dimension(self):
        return len(self.u_axes)

    @property
    def grids(self):
        return [self.t_axis, *self.x_axes, *self.u_axes]

    @property
    def names(self):
        d = self.dimension
        return ["t", *[f"x{a + 1}" for a in range(d)], *[f"u{a + 1}" for a in range(d)]]

    def u_points(self):
        mesh = np.meshgrid(*self.u_axes, indexing="ij")
        return np.stack(mesh, -1).reshape(-1, self.dimension)

    @property
    def u_radius(self):
        return float(min(min(-ax[0], ax[-1]) for ax in self.u_axes))

    def __call__(self, t, x, u):
        """Multilinear interpolation; raises ExtrapolationError outside the hull."""
        d = self.dimension
        x = as_points(x, d)
        u = as_points(u, d)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(t.shape, x.shape[:-1], u.shape[:-1])
        pts = np.concatenate([np.broadcast_to(t, shape)[..., None],
                              np.broadcast_to(x, shape + (d,)),
                              np.broadcast_to(u, shape + (d,))], axis=-1)
        return multilinear(self.grids, self.values, pts, names=self.names)


def build_table(model, env, t_axis, x_axes, u_axes, b_schedule=DEFAULT_SCHEDULE, cell=None,
                workers=1, tolerance=True, seed=None):
    """Estimate the effective Lagrangian at every lattice node.

    Nodes are independent jobs; results are placed by node index so the table
    does not depend on ``workers``. When the macro term is additive and the
    dynamics do not depend on x, the fast part is computed once per control
    node and the frozen macro value is added.

    Args:
        cell: dict of :class:`CellProblemSpec` keyword overrides (micro_dt, ...).
    """
    env = model.env if env is None else env
    d = model.dimension
    t_axis = np.atleast_1d(np.asarray(t_axis, dtype=float))
    x_axes = [np.atleast_1d(np.asarray(a, dtype=float)) for a in x_axes]
    u_axes = [np.atleast_1d(np.asarray(a, dtype=float)) for a in u_axes]
    if len(x_axes) != d or len(u_axes) != d:
        raise ConfigError(f"expected {d} x and u axes", "grids.table")
    cell = dict(cell or {})
    u_pts = np.stack(np.meshgrid(*u_axes, indexing="ij"), -1).reshape(-1, d)
    x_pts = np.stack(np.meshgrid(*x_axes, indexing="ij"), -1).reshape(-1, d)
    K = cell.pop("control_radius", None)
    if K is None:
        K = float(np.max(np.linalg.norm(u_pts, axis=-1))) + 1.0

    x_free = model.dynamics.kind != "user_table" or model.dynamics.table[0].size == 1
    separable = x_free

    def spec_for(t, x, u):
        return CellProblemSpec(u_tilde=tuple(u), t0=float(t), x0=tuple(x), control_radius=K, **cell)

    if separable:
        jobs = [(0.0, np.zeros(d), u) for u in u_pts]
    else:
        jobs = [(t, x, u) for t in t_axis for x in x_pts for u in u_pts]
    # Richardson tolerance on a deterministic 10% subsample of jobs
    tol_jobs = set(range(0, len(jobs), 10)) if tolerance else set()
    zero_macro = model if not separable else _without_macro(model)

    def run(i):
        t, x, u = jobs[i]
        try:
            series, _ = subadditive_series(spec_for(t, x, u), zero_macro, env, b_schedule,
                                           tolerance=i in tol_jobs)
            return series
        except (InfeasibleError, DomainError):
            return None

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            out = list(pool.map(run, range(len(jobs))))
    else:
        out = [run(i) for i in range(len(jobs))]

    dp_ratio = max((s.dp_ratio for i, s in enumerate(out) if s is not None and i in tol_jobs), default=0.0)
    est = np.array([np.nan if s is None else s.plateau_estimate for s in out])
    err = np.array([np.nan if s is None else s.plateau_error for s in out]) + dp_ratio
    nt, nx, nu = t_axis.size, x_pts.shape[0], u_pts.shape[0]
    if separable:
        macro = model.lagrangian.macro(t_axis[:, None], x_pts[None, :, :])
        values = macro[:, :, None] + est[None, None, :]
        errors = np.broadcast_to(err[None, None, :], (nt, nx, nu)).copy()
    else:
        values = est.reshape(nt, nx, nu)
        errors = err.reshape(nt, nx, nu)
    shape = (nt, *[a.size for a in x_axes], *[a.size for a in u_axes])
    values = values.reshape(shape)
    errors = errors.reshape(shape)
    meta = {"model_hash": model.hash(), "seed": None if env is None else env.seed,
            "b_schedule": [float(b) for b in b_schedule], "control_radius": K,
            "dp_ratio": dp_ratio, "separable": separable,
            "warnings": int(sum(1 for s in out if s is not None and s.warning)),
            "cell": {k: v for k, v in cell.items()}}
    return EffectiveLagrangianTable(t_axis, x_axes, u_axes, values, errors, np.isnan(values), meta)


def _without_macro(model):
    from .model import LagrangianSpec, ModelSpec, ZeroMacro
    lag = model.lagrangian
    return ModelSpec(model.dynamics, LagrangianSpec(lag.running, ZeroMacro(), lag.env, lag.psi,
                                                    lag.lam, lag.theta), model.T)
