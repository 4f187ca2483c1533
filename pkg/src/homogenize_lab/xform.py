"""Sup-transforms of L and Ltilde over the control ball, and a monotone HJB solver."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from ._interp import multilinear
from .env import as_points
from .errors import CFLError, CoercivityError, ExtrapolationError, RadiusTooSmallError
from .model import radius_ladder
from .solve import ValueField

GRID_N = {1: 2001, 2: 161}


def _refine(obj, u0, lo, hi, step):
    """One bounded scalar maximization pass per axis around ``u0``."""
    u = np.array(u0, dtype=float)
    best = obj(u)
    for a in range(u.size):
        a_lo = max(lo[a], u[a] - step)
        a_hi = min(hi[a], u[a] + step)
        if a_hi <= a_lo:
            continue

        def neg(s, a=a):
            w = u.copy()
            w[a] = s
            return -obj(w)

        res = minimize_scalar(neg, bounds=(a_lo, a_hi), method="bounded", options={"xatol": 1e-10})
        if -res.fun > best:
            best = -res.fun
            u[a] = res.x
    return best, u


def _grid_sup(values, controls, radius, n):
    """Argmax of a grid sweep; flags a maximum strictly attained on the outer ring."""
    i = int(np.argmax(values))
    edge = np.any(np.abs(controls) >= radius * (1 - 1e-12), axis=-1)
    strict_edge = bool(edge[i]) and (not np.any(~edge) or values[i] > np.max(values[~edge]) + 1e-12)
    return i, strict_edge


def auto_radius(model, p):
    """Smallest ladder radius beyond which no control beats ``u = 0`` for covector ``p``."""
    dyn = model.dynamics
    ell = model.lagrangian.running.radial
    spread = model.L_upper(0.0) - model.L_floor()
    pn = float(np.linalg.norm(np.atleast_1d(p)))
    for R in radius_ladder(1e4):
        if float(ell(R)) - float(ell(0.0)) > dyn.f_star(R) * pn + spread + 1e-9:
            return float(R)
    raise CoercivityError(f"running cost does not dominate |p| f*(R) for |p| = {pn:.6g}")


def hamiltonian(model, t, x, y, p, radius=None, n=None, retry=True):
    """``H(t, x, y, p) = sup_u {-f(x, u).p - L(t, x, y, u)}`` over ``|u| <= radius``.

    Returns:
        (value, argmax control, radius used).

    Raises:
        RadiusTooSmallError: if the sup is strictly attained on the boundary of
            the control ball even after one doubling.
    """
    d = model.dimension
    p = as_points(p, d).reshape(d)
    x = as_points(x, d).reshape(d)
    y = as_points(y, d).reshape(d)
    R = auto_radius(model, p) if radius is None else float(radius)
    n = n or GRID_N[d]
    g = np.linspace(-R, R, n)
    U = np.stack(np.meshgrid(*([g] * d), indexing="ij"), -1).reshape(-1, d)
    if d == 2:
        U = U[np.linalg.norm(U, axis=-1) <= R * (1 + 1e-12)]

    def obj_many(uu):
        f = model.dynamics.f(x, uu)
        return -(f @ p) - model.eval_L(t, x, y, uu)

    vals = obj_many(U)
    i, strict_edge = _grid_sup(vals, U, R, n)
    if strict_edge:
        if retry:
            return hamiltonian(model, t, x, y, p, 2 * R, n, retry=False)
        raise RadiusTooSmallError(f"sup attained on the boundary of the control ball of radius {R:.6g}")
    step = g[1] - g[0]
    best, u = _refine(lambda w: float(obj_many(w[None, :])[0]), U[i], [-R] * d, [R] * d, step)
    return max(best, float(vals[i])), u, R


def effective_hamiltonian(table, model, t, x, p):
    """``sup_u {-f(x, u).p - Ltilde(t, x, u)}`` over the table's control lattice.

    Raises:
        RadiusTooSmallError: if the sup is strictly attained on the table edge.
    """
    d = table.dimension
    p = as_points(p, d).reshape(d)
    x = as_points(x, d).reshape(d)
    U = table.u_points()
    f = model.dynamics.f(x, U)
    lt = table(t, x, U)
    vals = -(f @ p) - lt
    vals = np.where(np.isnan(vals), -np.inf, vals)
    i = int(np.argmax(vals))
    lo = [ax[0] for ax in table.u_axes]
    hi = [ax[-1] for ax in table.u_axes]
    on_edge = np.any((U <= np.asarray(lo) + 1e-12) | (U >= np.asarray(hi) - 1e-12), axis=-1)
    if on_edge[i] and (not np.any(~on_edge) or vals[i] > np.max(vals[~on_edge]) + 1e-12):
        raise RadiusTooSmallError(f"sup for p = {p.tolist()} attained on the table edge; "
                                  "extend the control lattice")
    step = max(float(np.max(np.diff(ax))) if ax.size > 1 else 0.0 for ax in table.u_axes)

    def obj(w):
        v = -(model.dynamics.f(x, w[None, :])[0] @ p) - float(table(t, x, w[None, :])[0])
        return v if math.isfinite(v) else -math.inf

    best, u = _refine(obj, U[i], lo, hi, step)
    return max(best, float(vals[i])), u


@dataclass
class HamiltonianTable:
    """Lattice of Hamiltonian values over (t, x, p) with the argmax controls."""

    t_axis: np.ndarray
    x_axes: list
    p_axes: list
    values: np.ndarray
    argmax: np.ndarray
    control_radius: float
    metadata: dict = field(default_factory=dict)

    @property
    def dimension(self):
        return len(self.p_axes)

    @property
    def grids(self):
        return [self.t_axis, *self.x_axes, *self.p_axes]

    @property
    def names(self):
        d = self.dimension
        return ["t", *[f"x{a + 1}" for a in range(d)], *[f"p{a + 1}" for a in range(d)]]

    def __call__(self, t, x, p):
        d = self.dimension
        x = as_points(x, d)
        p = as_points(p, d)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(t.shape, x.shape[:-1], p.shape[:-1])
        pts = np.concatenate([np.broadcast_to(t, shape)[..., None],
                              np.broadcast_to(x, shape + (d,)),
                              np.broadcast_to(p, shape + (d,))], axis=-1)
        return multilinear(self.grids, self.values, pts, names=self.names)

    def slope_bounds(self):
        """Per-axis max |dH/dp| from finite differences of the table."""
        d = self.dimension
        out = []
        for a in range(d):
            ax = 1 + d + a
            grid = self.p_axes[a]
            if grid.size < 2:
                out.append(0.0)
                continue
            diff = np.diff(self.values, axis=ax)
            shape = [1] * self.values.ndim
            shape[ax] = grid.size - 1
            slope = np.abs(diff) / np.diff(grid).reshape(shape)
            out.append(float(np.nanmax(slope)))
        return np.array(out)


def build_hamiltonian_table(table, model, t_axis, x_axes, p_axes, workers=1):
    """Effective Hamiltonian on a (t, x, p) lattice from an effective Lagrangian table."""
    d = table.dimension
    t_axis = np.atleast_1d(np.asarray(t_axis, dtype=float))
    x_axes = [np.atleast_1d(np.asarray(a, dtype=float)) for a in x_axes]
    p_axes = [np.atleast_1d(np.asarray(a, dtype=float)) for a in p_axes]
    x_pts = np.stack(np.meshgrid(*x_axes, indexing="ij"), -1).reshape(-1, d)
    p_pts = np.stack(np.meshgrid(*p_axes, indexing="ij"), -1).reshape(-1, d)
    separable = bool(table.metadata.get("separable")) and model.dynamics.kind != "user_table"
    if separable:
        # Ltilde = micro(u) + m(t, x): H = H_micro(p) - m(t, x), one sup per p
        base = _strip_macro(table, model)
        jobs = [(float(base.t_axis[0]), base_x(base), p) for p in p_pts]
        src = base
    else:
        jobs = [(t, x, p) for t in t_axis for x in x_pts for p in p_pts]
        src = table

    def run(i):
        t, x, p = jobs[i]
        return effective_hamiltonian(src, model, t, x, p)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            out = list(pool.map(run, range(len(jobs))))
    else:
        out = [run(i) for i in range(len(jobs))]
    vals = np.array([o[0] for o in out])
    arg = np.array([o[1] for o in out])
    nt, nx, npp = t_axis.size, x_pts.shape[0], p_pts.shape[0]
    if separable:
        macro = model.lagrangian.macro(t_axis[:, None], x_pts[None, :, :])
        values = vals[None, None, :] - macro[:, :, None]
        argmax = np.broadcast_to(arg[None, None], (nt, nx, npp, d)).copy()
    else:
        values = vals.reshape(nt, nx, npp)
        argmax = arg.reshape(nt, nx, npp, d)
    shape = (nt, *[a.size for a in x_axes], *[a.size for a in p_axes])
    return HamiltonianTable(t_axis, x_axes, p_axes, values.reshape(shape),
                            argmax.reshape(shape + (d,)), table.u_radius,
                            {"source_model_hash": table.metadata.get("model_hash"), "separable": separable})


def base_x(table):
    return np.array([ax[0] for ax in table.x_axes])


def _strip_macro(table, model):
    """Table restricted to its first (t, x) node with the macro term removed."""
    from .cell import EffectiveLagrangianTable
    d = table.dimension
    t0 = table.t_axis[:1]
    x0 = [ax[:1] for ax in table.x_axes]
    m0 = float(np.ravel(model.lagrangian.macro(t0[0], base_x(table)[None, :]))[0])
    idx = (slice(0, 1),) * (1 + d)
    return EffectiveLagrangianTable(t0, x0, table.u_axes, table.values[idx] - m0,
                                    table.errors[idx], table.infeasible[idx], dict(table.metadata))


def lagrangian_from_hamiltonian(p_grid, h_values, v):
    """Discrete dual ``sup_p {-v.p - H(p)}`` over a 1-D p grid."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return np.max(-v[:, None] * p_grid[None, :] - h_values[None, :], axis=1)


# ----------------------------------------------------------------------------
# Lax-Friedrichs HJB


def solve_hjb(H, grid, psi, alpha=None, p_range=None):
    """Backward explicit Lax-Friedrichs scheme for ``-V_t + H(t, x, D V) = 0``.

    Args:
        H: callable ``H(t, x, p)`` on arrays (e.g. a :class:`HamiltonianTable`).
        alpha: per-axis dissipation; defaults to the table slope bounds, or to
            a finite-difference estimate over ``p_range``.

    Raises:
        CFLError: if ``dt * sum(alpha) / dx > 1``; carries a suggested dt.
    """
    d = grid.dimension
    if alpha is None:
        if isinstance(H, HamiltonianTable):
            alpha = H.slope_bounds()
        else:
            if p_range is None:
                raise ValueError("need alpha or p_range for a callable Hamiltonian")
            alpha = _sample_slopes(H, grid, p_range)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (d,))
    cfl = grid.dt * float(np.sum(alpha)) / grid.dx
    if cfl > 1.0 + 1e-12:
        raise CFLError(f"CFL number {cfl:.4g} > 1", suggested_dt=0.99 * grid.dx / float(np.sum(alpha)))
    shape = grid.shape
    X = grid.nodes()
    times = grid.times
    n = grid.n_steps
    V = np.empty((n + 1,) + shape)
    V[n] = np.asarray(psi(X)).reshape(shape)
    for i in range(n - 1, -1, -1):
        cur = V[i + 1]
        pm, pp = [], []
        for a in range(d):
            # linear extrapolation ghosts: the one-sided slopes at the edge coincide
            fwd = np.diff(cur, axis=a) / grid.dx
            first = np.take(fwd, [0], axis=a)
            last = np.take(fwd, [-1], axis=a)
            pm.append(np.concatenate([first, fwd], axis=a))
            pp.append(np.concatenate([fwd, last], axis=a))
        pmid = np.stack([(pm[a] + pp[a]) / 2 for a in range(d)], -1).reshape(-1, d)
        hval = np.asarray(H(times[i], X, pmid)).reshape(shape)
        diss = sum(alpha[a] / 2 * (pp[a] - pm[a]) for a in range(d))
        V[i] = cur - grid.dt * (hval - diss)
    return ValueField(grid, V, None, "hjb", {"alpha": alpha.tolist(), "cfl": cfl})


def _sample_slopes(H, grid, p_range, n=201):
    d = grid.dimension
    lo, hi = p_range
    g = np.linspace(lo, hi, n)
    X = grid.nodes()[:: max(1, len(grid.nodes()) // 16)]
    out = []
    for a in range(d):
        P = np.zeros((n, d))
        P[:, a] = g
        best = 0.0
        for t in (grid.times[0], grid.times[-1]):
            for x in X:
                hv = np.asarray(H(t, x, P)).ravel()
                best = max(best, float(np.max(np.abs(np.diff(hv)) / np.diff(g))))
        out.append(best)
    return np.array(out)
