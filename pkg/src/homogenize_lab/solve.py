"""Backward dynamic programming for the fine, macro and homogenized problems,
plus step-control approximation, cost evaluation and control repair."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._interp import multilinear, uniform_axes
from .cell import CellProblemSpec, cell_cost
from .env import as_points
from .errors import (ConfigError, DomainError, ExtrapolationError, InfeasibleError,
                     ModelContractError, ThresholdError)
from .model import truncation_radius

_TOL = 1e-9


def _count(span, step, what):
    n = span / step
    k = round(n)
    if abs(n - k) > _TOL * max(1.0, n):
        raise ConfigError(f"{what} span {span} is not a multiple of {step}", f"grids.{what}")
    return int(k)


@dataclass(frozen=True)
class GridSpec:
    """Time-space grid and control grid of a value problem."""

    T: float
    dt: float
    box_lo: tuple
    box_hi: tuple
    dx: float
    control_radius: float
    control_grid_n: int = 21
    t_start: float = 0.0

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.box_lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.box_hi))
        object.__setattr__(self, "box_lo", lo)
        object.__setattr__(self, "box_hi", hi)
        if len(lo) != len(hi):
            raise ConfigError("box_lo and box_hi dimensions differ", "grids.box")
        if not self.T > self.t_start:
            raise ConfigError("T must exceed t_start", "grids.T")
        if not self.dt > 0:
            raise ConfigError("must be > 0", "grids.dt")
        if not self.dx > 0:
            raise ConfigError("must be > 0", "grids.dx")
        if any(h <= l for l, h in zip(lo, hi)):
            raise ConfigError("box_hi must exceed box_lo", "grids.box")
        if not self.control_radius > 0:
            raise ConfigError("must be > 0", "grids.control_radius")
        if self.control_grid_n < 2:
            raise ConfigError("must be >= 2", "grids.control_grid_n")
        _count(self.T - self.t_start, self.dt, "dt")
        for l, h in zip(lo, hi):
            _count(h - l, self.dx, "dx")

    @property
    def dimension(self):
        return len(self.box_lo)

    @property
    def n_steps(self):
        return _count(self.T - self.t_start, self.dt, "dt")

    @property
    def times(self):
        return self.t_start + self.dt * np.arange(self.n_steps + 1)

    @property
    def shape(self):
        return tuple(_count(h - l, self.dx, "dx") + 1 for l, h in zip(self.box_lo, self.box_hi))

    @property
    def axes(self):
        return uniform_axes(self.box_lo, self.dx, self.shape)

    def nodes(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, -1).reshape(-1, self.dimension)

    def controls(self):
        g = np.linspace(-self.control_radius, self.control_radius, self.control_grid_n)
        mesh = np.meshgrid(*([g] * self.dimension), indexing="ij")
        return np.stack(mesh, -1).reshape(-1, self.dimension)

    def check_cfl(self, model):
        fK = model.dynamics.f_star(self.control_radius)
        if self.dt > self.dx / fK * (1 + 1e-12):
            raise ConfigError(f"dt = {self.dt} exceeds dx / f*(K) = {self.dx / fK:.6g}", "grids.dt")

    def compact_mask(self, fraction=0.5):
        """Nodes in the central ``fraction`` of the box."""
        nodes = self.nodes()
        lo = np.asarray(self.box_lo)
        hi = np.asarray(self.box_hi)
        c, half = 0.5 * (lo + hi), 0.5 * fraction * (hi - lo)
        inside = np.all(np.abs(nodes - c) <= half + 1e-12, axis=-1)
        return inside.reshape(self.shape)

    def to_dict(self):
        return {"t_start": self.t_start, "T": self.T, "dt": self.dt, "box_lo": list(self.box_lo),
                "box_hi": list(self.box_hi), "dx": self.dx, "control_radius": self.control_radius,
                "control_grid_n": self.control_grid_n}


@dataclass
class ValueField:
    """Values on (time slice, space node) with the minimizing control per node."""

    grid: GridSpec
    values: np.ndarray
    policy: np.ndarray | None
    kind: str
    metadata: dict = field(default_factory=dict)

    def at(self, i, x):
        """Interpolate slice ``i`` at points ``x``."""
        x = as_points(x, self.grid.dimension)
        return multilinear(self.grid.axes, self.values[i], x)

    def sup_gap(self, other, mask=None):
        diff = np.abs(self.values - other.values)
        if mask is not None:
            diff = diff[:, mask]
        return float(np.max(diff))


# ----------------------------------------------------------------------------
# generic semi-Lagrangian backward recursion


def _backward(grid, terminal, stage, feet, boundary_penalty):
    """V_i(x) = min_c stage(i, c)(x) + V_{i+1}(feet(i, c)(x)).

    ``stage(i)`` returns (n_nodes, n_c) costs (NaN = infeasible) and
    ``feet(i)`` returns (n_nodes, n_c, d) landing points. Feet outside the box
    are clamped and charged ``boundary_penalty``.
    """
    axes = grid.axes
    lo = np.asarray(grid.box_lo)
    hi = np.asarray(grid.box_hi)
    n = grid.n_steps
    shape = grid.shape
    values = np.empty((n + 1,) + shape)
    values[n] = terminal.reshape(shape)
    policy_idx = np.empty((n,) + shape, dtype=np.int64)
    clamped_any = False
    for i in range(n - 1, -1, -1):
        c = stage(i)
        ft = feet(i)
        out = np.any((ft < lo - 1e-12) | (ft > hi + 1e-12), axis=-1)
        if out.any():
            clamped_any = True
            ft = np.clip(ft, lo, hi)
        future = multilinear(axes, values[i + 1], ft)
        tot = c + future + np.where(out, boundary_penalty, 0.0)
        tot = np.where(np.isnan(tot), np.inf, tot)
        arg = np.argmin(tot, axis=1)
        best = tot[np.arange(tot.shape[0]), arg]
        if np.any(~np.isfinite(best)):
            raise InfeasibleError(f"every control infeasible at some node of slice {i}")
        values[i] = best.reshape(shape)
        policy_idx[i] = arg.reshape(shape)
    return values, policy_idx, clamped_any


def solve_fine(model, env, eps, grid, check_resolution=True):
    """Fine-scale value ``V_eps`` with stage cost ``dt L(t_i, x, x/eps, u)``."""
    if not eps > 0:
        raise ConfigError("must be > 0", "sweep.eps")
    if check_resolution and grid.dx > eps / 4 * (1 + 1e-12):
        raise ConfigError(f"dx = {grid.dx} does not resolve eps = {eps} (need dx <= eps/4)", "grids.dx")
    grid.check_cfl(model)
    env = model.env if env is None else env
    lag = model.lagrangian
    X = grid.nodes()
    U = grid.controls()
    pot = np.zeros(len(X)) if env is None else env.evaluate(X / eps)
    ell = lag.running(U)
    F = model.dynamics.f(X[:, None, :], U[None, :, :])
    penalty = grid.dt * model.L_upper(grid.control_radius)
    times = grid.times

    def stage(i):
        return grid.dt * (lag.macro(times[i], X)[:, None] + pot[:, None] + ell[None, :])

    def feet(i):
        return X[:, None, :] + grid.dt * F

    values, pidx, clamped = _backward(grid, lag.psi(X), stage, feet, penalty)
    return ValueField(grid, values, U[pidx], "fine",
                      {"eps": eps, "boundary_clamped": clamped, "model_hash": model.hash()})


def solve_homogenized(table, grid, model):
    """Homogenized value with stage cost ``dt Ltilde(t_i, x, u)`` from the table."""
    grid.check_cfl(model)
    X = grid.nodes()
    U = grid.controls()
    times = grid.times
    n_x, n_c = len(X), len(U)
    F = model.dynamics.f(X[:, None, :], U[None, :, :])
    penalty = grid.dt * model.L_upper(grid.control_radius)
    Xb = np.broadcast_to(X[:, None, :], (n_x, n_c, X.shape[1]))
    Ub = np.broadcast_to(U[None, :, :], (n_x, n_c, U.shape[1]))

    def stage(i):
        return grid.dt * table(times[i], Xb, Ub)

    def feet(i):
        return X[:, None, :] + grid.dt * F

    values, pidx, clamped = _backward(grid, model.lagrangian.psi(X), stage, feet, penalty)
    return ValueField(grid, values, U[pidx], "homogenized",
                      {"boundary_clamped": clamped, "model_hash": model.hash()})


@dataclass
class CellCostArray:
    """Explicit cell costs ``L_{tau,eps}(t_i, x_j, u_c)`` with shape (n_t, n_x, n_c)."""

    values: np.ndarray

    def __call__(self, i, X, U):
        return self.values[i]


class MacroCellCosts:
    """Cell costs ``eps F_{0, tau/eps}`` computed on demand.

    Results are cached by (time if the macro term depends on it, canonical
    phase of ``x/eps``, slow x if the cost depends on it, control index).
    """

    def __init__(self, model, env, eps, tau, cell=None):
        self.model, self.env, self.eps, self.tau = model, env, eps, tau
        self.cell = dict(cell or {})
        self._cache = {}
        self.n_solved = 0

    def __call__(self, i, X, U):
        lag = self.model.lagrangian
        t = float(self._times[i])
        t_key = t if lag.macro.lip_t(self.model.T) > 0 else 0.0
        x_dep = lag.macro.x_dependent or self.model.dynamics.kind == "user_table"
        out = np.empty((len(X), len(U)))
        phases = self.env.canonical_phase(X / self.eps) if self.env is not None else X * 0
        for j, x in enumerate(X):
            key_x = tuple(np.round(x, 12)) if x_dep else ()
            key_p = tuple(np.round(phases[j], 12))
            for c, u in enumerate(U):
                key = (t_key, key_p, key_x, c)
                if key not in self._cache:
                    spec = CellProblemSpec(u_tilde=tuple(u), horizon_b=self.tau / self.eps, t0=t,
                                           x0=tuple(x), y_start=tuple(x / self.eps), **self.cell)
                    try:
                        self._cache[key] = cell_cost(spec, self.model, self.env, self.eps).value
                    except (InfeasibleError, DomainError):
                        self._cache[key] = np.nan
                    self.n_solved += 1
                out[j, c] = self._cache[key]
        return out


def solve_macro(costs, grid, model):
    """Macro-discretized value: ``V_i(x) = min_u L_{tau,eps}(t_i, x, u) + V_{i+1}(x + tau f(x, u))``.

    ``grid.dt`` plays the role of tau; infeasible controls (NaN costs) are skipped.
    """
    X = grid.nodes()
    U = grid.controls()
    if isinstance(costs, MacroCellCosts):
        costs._times = grid.times
        if abs(costs.tau - grid.dt) > _TOL:
            raise ConfigError("cell-cost tau differs from grid dt", "grids.dt")
    F = model.dynamics.f(X[:, None, :], U[None, :, :])
    penalty = grid.dt * model.L_upper(grid.control_radius)

    def stage(i):
        return np.asarray(costs(i, X, U), dtype=float)

    def feet(i):
        return X[:, None, :] + grid.dt * F

    try:
        values, pidx, clamped = _backward(grid, model.lagrangian.psi(X), stage, feet, penalty)
    except InfeasibleError as exc:
        raise InfeasibleError(f"all cell costs infeasible: {exc}") from exc
    return ValueField(grid, values, U[pidx], "macro",
                      {"boundary_clamped": clamped, "model_hash": model.hash()})


def macro_error_bound(model, K, tau, T):
    """Bound on ``|V_{tau,eps} - V_eps|`` assembled from the model constants."""
    dyn = model.dynamics
    eta = dyn.eta(K)
    R = K + (min(eta, dyn.lip_H(K) * tau * dyn.f_star(K)) if math.isfinite(eta) else dyn.lip_H(K) * tau * dyn.f_star(K))
    fK = dyn.f_star(K)
    return (T * tau * (model.lip_L_t() + fK * model.lip_L_u(R) * dyn.lip_H(R))
            + T * float(model.m_L(tau * fK)))


# ----------------------------------------------------------------------------
# step controls


@dataclass
class StepControl:
    """Piecewise constant control: ``values[i]`` on ``[breakpoints[i], breakpoints[i+1])``."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.breakpoints = np.asarray(self.breakpoints, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        self.values = vals
        if self.breakpoints.size != self.values.shape[0] + 1:
            raise ValueError("need len(breakpoints) == len(values) + 1")
        if np.any(np.diff(self.breakpoints) < 0):
            raise ValueError("breakpoints must be nondecreasing")

    @property
    def lengths(self):
        return np.diff(self.breakpoints)

    def __call__(self, s):
        i = np.clip(np.searchsorted(self.breakpoints, s, side="right") - 1, 0, len(self.values) - 1)
        return self.values[i]

    def sup_norm(self):
        return float(np.max(np.linalg.norm(self.values, axis=-1)))

    def to_rows(self):
        return [[float(t)] + [float(v) for v in u] for t, u in zip(self.breakpoints[:-1], self.values)]


def approximate_by_step_control(model, u, kappa, t0=0.0, T=None, lam=None, max_depth=24, probes=33):
    """Dyadic step approximation with per-interval oscillation <= min(kappa, lam).

    A :class:`StepControl` input is returned unchanged.
    """
    if isinstance(u, StepControl):
        return u
    T = model.T if T is None else T
    lam = model.lagrangian.lam if lam is None else lam
    cap = min(kappa, lam)
    d = model.dimension
    pending = [(t0, T, 0)]
    cuts = []
    while pending:
        a, b, depth = pending.pop()
        s = np.linspace(a, b, probes)
        vals = np.array([np.reshape(u(x), d) for x in s])
        osc = float(np.max(np.linalg.norm(vals[:, None] - vals[None, :], axis=-1)))
        if osc <= cap or depth >= max_depth:
            cuts.append((a, b, np.reshape(u(0.5 * (a + b)), d)))
        else:
            m = 0.5 * (a + b)
            pending.append((m, b, depth + 1))
            pending.append((a, m, depth + 1))
    cuts.sort(key=lambda c: c[0])
    bps = np.array([c[0] for c in cuts] + [cuts[-1][1]])
    return StepControl(bps, np.array([c[2] for c in cuts]))


def step_approximation_bound(model, kappa, R, T=None, eps=None):
    """Cost gap bound for a step approximation at tolerance ``kappa``.

    With an environment and ``eps`` the slow modulus includes the fast
    Lipschitz constant divided by ``eps``.
    """
    T = model.T if T is None else T
    lf = model.dynamics.lip_f(R)
    r = kappa * (T + 1) * math.exp(lf * (T + 1))
    m = float(model.m_L(r))
    if eps is not None and model.env is not None:
        m += model.lip_L_y() * r / eps
    return T * m + kappa * T * model.lip_L_u(R) + kappa * model.L_upper(R)


def evaluate_cost(model, env, eps, t, x, u, micro_dt=1e-3, T=None, terminal=True, return_path=False):
    """Cost of control ``u`` from ``(t, x)`` by RK4 on the augmented system.

    Step controls are integrated interval by interval with substeps <=
    ``micro_dt``; callables are sampled at the RK stages.
    """
    env = model.env if env is None else env
    T = model.T if T is None else T
    d = model.dimension
    lag = model.lagrangian
    x = np.asarray(as_points(x, d), dtype=float).reshape(d)

    def L_at(s, xx, uu):
        y = xx / eps
        pot = 0.0 if env is None else float(env.evaluate(y[None, :])[0])
        return float(lag.macro(s, xx[None, :])[0]) + pot + float(lag.running(uu[None, :])[0])

    def rhs(s, z, uu):
        xx = z[:d]
        return np.concatenate([model.dynamics.f(xx[None, :], uu[None, :])[0], [L_at(s, xx, uu)]])

    z = np.concatenate([x, [0.0]])
    pts = [z[:d].copy()]
    if isinstance(u, StepControl):
        bps = np.clip(u.breakpoints, t, T)
        pieces = [(bps[i], bps[i + 1], u.values[i]) for i in range(len(u.values)) if bps[i + 1] > bps[i]]
        # the last value persists if the control ends before T
        if u.breakpoints[-1] < T:
            pieces.append((max(u.breakpoints[-1], t), T, u.values[-1]))
    else:
        pieces = [(t, T, None)]
    for a, b, val in pieces:
        n = max(1, int(math.ceil((b - a) / micro_dt - 1e-12)))
        hstep = (b - a) / n
        for k in range(n):
            s = a + k * hstep
            if val is None:
                u1, u2, u3 = (np.reshape(u(v), d) for v in (s, s + hstep / 2, s + hstep))
            else:
                u1 = u2 = u3 = val
            k1 = rhs(s, z, u1)
            k2 = rhs(s + hstep / 2, z + hstep / 2 * k1, u2)
            k3 = rhs(s + hstep / 2, z + hstep / 2 * k2, u2)
            k4 = rhs(s + hstep, z + hstep * k3, u3)
            z = z + hstep / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        pts.append(z[:d].copy())
    cost = float(z[d])
    if terminal:
        cost += float(lag.psi(z[None, :d])[0])
    if return_path:
        return cost, z[:d].copy(), np.array(pts)
    return cost


# ----------------------------------------------------------------------------
# control repair


@dataclass
class RepairParams:
    """Repair target ``R``; ``N``, ``W``, ``beta`` are filled in by the repair."""

    R: float
    N: float | None = None
    W: float | None = None
    beta: float | None = None
    lam: float | None = None
    required_R: float | None = None


@dataclass
class RepairResult:
    control: StepControl
    iterations: int
    params: RepairParams
    offending: int


def _x_free(model):
    dyn = model.dynamics
    return dyn.kind != "user_table" or dyn.table[0].size == 1


def repair_control(model, env, u, params, x0=0.0, eps=1.0, micro_dt=1e-3):
    """Replace controls exceeding ``R`` while keeping the endpoint and not raising cost.

    Works on the control's own interval ``[t0, t0 + h]``. At each iteration the
    last offending interval is traversed with a delta-speed direction control
    (same displacement, longer time) and the time it needs is taken from the
    intervals with ``|u| <= N``, which are sped up by ``1/(1 - beta)``.

    Raises:
        ThresholdError: if ``R`` is below the radius required for the measured
            cost rate.
        ModelContractError: for dynamics that depend on x.
    """
    if not _x_free(model):
        raise ModelContractError("control repair needs x-independent dynamics")
    dyn = model.dynamics
    d = model.dimension
    R = float(params.R)
    t0, t1 = float(u.breakpoints[0]), float(u.breakpoints[-1])
    h = t1 - t0
    offending = int(np.sum(np.linalg.norm(u.values, axis=-1) > R))
    if offending == 0:
        return RepairResult(u, 0, replace(params, W=None), 0)
    c0 = model.L_floor()
    cost = evaluate_cost(model, env, eps, t0, x0, u, micro_dt, T=t1, terminal=False)
    W = cost / h
    R_req = truncation_radius(model, max(W, float(model.L_star_radial(0.0))), h=h, safety=1.0)
    ell = model.lagrangian.running.radial
    Wp = max(W - c0, 1e-12)
    N = next(float(r) for r in _ladder() if float(ell(r)) - float(ell(0.0)) >= 2 * Wp)
    params = replace(params, W=W, N=N, required_R=R_req, lam=model.lagrangian.lam)
    if R < R_req:
        raise ThresholdError(f"R = {R:.6g} is below the repair threshold {R_req:.6g} for "
                             f"measured cost rate W = {W:.6g}", R_req)
    bps = u.breakpoints.copy()
    vals = u.values.copy()
    x_ref = np.zeros(d)
    iterations = 0
    beta_max = 0.0
    while True:
        norms = np.linalg.norm(vals, axis=-1)
        bad = np.nonzero(norms > R)[0]
        if bad.size == 0:
            break
        j = int(bad[-1])
        lengths = np.diff(bps)
        small = (norms <= N) & (np.arange(len(vals)) != j) & (lengths > 0)
        zeta = float(np.sum(lengths[small]))
        vj = dyn.f(x_ref, vals[j])[0]
        speed = float(np.linalg.norm(vj))
        extra = lengths[j] * (speed / dyn.delta - 1.0)
        if zeta <= 0.0:
            raise ThresholdError("no interval with |u| <= N to absorb the time change", R_req)
        beta = extra / zeta
        if not beta < 1.0:
            raise ThresholdError(f"time-change rate beta = {beta:.6g} >= 1", R_req)
        beta_max = max(beta_max, beta)
        new_len = lengths.copy()
        new_vals = vals.copy()
        new_len[j] = lengths[j] * speed / dyn.delta
        new_vals[j] = dyn.direction_control(x_ref, vj / speed)
        for i in np.nonzero(small)[0]:
            vi = dyn.f(x_ref, vals[i])[0]
            new_len[i] = (1.0 - beta) * lengths[i]
            new_vals[i] = dyn.invert_dynamics(x_ref, vals[i], vi / (1.0 - beta))[0]
        bps = t0 + np.concatenate([[0.0], np.cumsum(new_len)])
        bps[-1] = t1
        vals = new_vals
        iterations += 1
        if iterations > offending:
            raise ModelContractError("repair did not terminate within the offending-interval count")
    params = replace(params, beta=beta_max)
    return RepairResult(StepControl(bps, vals), iterations, params, offending)


def _ladder():
    from .model import radius_ladder
    return radius_ladder()
