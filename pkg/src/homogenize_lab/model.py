"""Controlled system (f, L): dynamics, Lagrangian pieces and their constants.

Controls, velocities and positions are float arrays with a trailing axis of
length ``d``; in one dimension plain scalars are accepted everywhere.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from ._interp import multilinear
from .env import EnvironmentHandle, as_points, evaluate_potential, shift_environment
from .errors import (CoercivityError, ConfigError, DomainError, ExtrapolationError,
                     ModelContractError)

DYNAMICS_KINDS = ("calculus_of_variations", "bounded_speed", "user_table")
NEWTON_TOL = 1e-10


def _norm(a):
    return np.sqrt(np.sum(np.square(a), axis=-1))


# ----------------------------------------------------------------------------
# dynamics


@dataclass(frozen=True)
class DynamicsSpec:
    """State dynamics ``x' = f(x, u)`` with the constants of its contracts.

    Attributes:
        kind: one of ``DYNAMICS_KINDS``.
        dimension: 1 or 2 (``user_table`` is 1-D only).
        C: speed bound for ``bounded_speed``.
        delta: radius of the velocity sphere reachable with ``|u| <= M``.
        table: ``(x_grid, u_grid, values)`` for ``user_table``.
        eta_decl: declared inversion radius (``user_table``).
        lip_H_decl: declared Lipschitz constant of the local inverse (``user_table``).
        M_tilde_decl: declared bound on the zero control (``user_table``).
    """

    kind: str
    dimension: int = 1
    C: float = 2.0
    delta: float = 1.0
    table: tuple | None = field(default=None, repr=False)
    eta_decl: float | None = None
    lip_H_decl: float | None = None
    M_tilde_decl: float | None = None

    def __post_init__(self):
        if self.kind not in DYNAMICS_KINDS:
            raise ConfigError(f"unknown kind {self.kind!r}", "model.dynamics.kind")
        if self.dimension not in (1, 2):
            raise ConfigError("must be 1 or 2", "model.dynamics.dimension")
        if not self.delta > 0:
            raise ConfigError("must be > 0", "model.dynamics.delta")
        if self.kind == "bounded_speed":
            if not self.C > 0:
                raise ConfigError("must be > 0", "model.dynamics.C")
            if not self.delta < self.C:
                raise ConfigError("delta must be below the speed bound C", "model.dynamics.delta")
        if self.kind == "user_table":
            if self.dimension != 1:
                raise ConfigError("user_table dynamics are 1-D only", "model.dynamics.dimension")
            if self.table is None:
                raise ConfigError("missing table", "model.dynamics.table")
            xg, ug, vals = (np.asarray(a, dtype=float) for a in self.table)
            if vals.shape != (xg.size, ug.size):
                raise ConfigError(f"values shape {vals.shape} != ({xg.size}, {ug.size})",
                                  "model.dynamics.table")
            if np.any(np.diff(xg) <= 0) or np.any(np.diff(ug) <= 0):
                raise ConfigError("grids must be strictly increasing", "model.dynamics.table")
            object.__setattr__(self, "table", (xg, ug, vals))
            for name in ("eta_decl", "lip_H_decl"):
                v = getattr(self, name)
                if v is None or not v > 0:
                    raise ConfigError("must be declared > 0 for user_table",
                                      f"model.dynamics.{name.removesuffix('_decl')}")

    @classmethod
    def from_function(cls, fn, x_grid, u_grid, **kw):
        """Tabulate a scalar ``fn(x, u)`` into ``user_table`` dynamics."""
        xg = np.asarray(x_grid, dtype=float)
        ug = np.asarray(u_grid, dtype=float)
        X, U = np.meshgrid(xg, ug, indexing="ij")
        return cls("user_table", table=(xg, ug, np.asarray(fn(X, U), dtype=float)), **kw)

    @classmethod
    def from_csv(cls, path, **kw):
        """Load ``user_table`` samples from a CSV with columns x, u, f."""
        data = np.genfromtxt(path, delimiter=",", names=True)
        xg = np.unique(data["x"])
        ug = np.unique(data["u"])
        vals = np.full((xg.size, ug.size), np.nan)
        vals[np.searchsorted(xg, data["x"]), np.searchsorted(ug, data["u"])] = data["f"]
        if np.isnan(vals).any():
            raise ConfigError("table samples do not fill a full (x, u) lattice", "model.dynamics.table")
        return cls("user_table", table=(xg, ug, vals), **kw)

    # -- evaluation --------------------------------------------------------

    def f(self, x, u):
        u = as_points(u, self.dimension)
        if self.kind == "calculus_of_variations":
            return u.copy()
        if self.kind == "bounded_speed":
            s = np.sqrt(np.sum(u * u, axis=-1, keepdims=True) + 1.0)
            return self.C * u / s
        xg, ug, vals = self.table
        x = as_points(x, 1)[..., 0]
        x, uu = np.broadcast_arrays(np.clip(x, xg[0], xg[-1]), u[..., 0])
        pts = np.stack([x, uu], axis=-1)
        return multilinear([xg, ug], vals, pts, names=["x", "u"])[..., None]

    def jacobian(self, x, u):
        """Jacobian ``df/du`` with shape (..., d, d)."""
        u = as_points(u, self.dimension)
        d = self.dimension
        if self.kind == "calculus_of_variations":
            return np.broadcast_to(np.eye(d), u.shape[:-1] + (d, d)).copy()
        if self.kind == "bounded_speed":
            s2 = np.sum(u * u, axis=-1)[..., None, None] + 1.0
            outer = u[..., :, None] * u[..., None, :]
            return self.C * (np.eye(d) / np.sqrt(s2) - outer / s2 ** 1.5)
        hstep = 1e-6
        return ((self.f(x, u + hstep) - self.f(x, u - hstep)) / (2 * hstep))[..., None]

    # -- constants -----------------------------------------------------------

    @property
    def u_limit(self):
        """Largest control norm the dynamics can be evaluated at."""
        if self.kind == "user_table":
            ug = self.table[1]
            return float(min(-ug[0], ug[-1]))
        return math.inf

    def f_star(self, R):
        """``sup_{|u| <= R} |f(x, u)|``."""
        R = float(R)
        if self.kind == "calculus_of_variations":
            return R
        if self.kind == "bounded_speed":
            return self.C * R / math.sqrt(R * R + 1.0)
        xg, ug, vals = self.table
        R = min(R, self.u_limit)
        inside = np.abs(ug) <= R
        cand = [np.abs(vals[:, inside]).max()] if inside.any() else [0.0]
        edge = self.f(xg[:, None], np.array([-R, R])[None, :, None])
        return float(max(max(cand), np.abs(edge).max()))

    def eta(self, R):
        """Inversion radius ``eta(R)``."""
        if self.kind == "calculus_of_variations":
            return math.inf
        if self.kind == "bounded_speed":
            return 0.5 * (self.C - self.f_star(R))
        return float(self.eta_decl)

    def lip_H(self, R):
        """Lipschitz constant of the local inverse on the ``eta(R)`` ball."""
        if self.kind == "calculus_of_variations":
            return 1.0
        if self.kind == "bounded_speed":
            rv = 0.5 * (self.C + self.f_star(R))
            return (1.0 - (rv / self.C) ** 2) ** -1.5 / self.C
        return float(self.lip_H_decl)

    def lip_f(self, R=None):
        """Joint Lipschitz constant of ``f`` in (x, u)."""
        if self.kind == "calculus_of_variations":
            return 1.0
        if self.kind == "bounded_speed":
            return float(self.C)
        xg, ug, vals = self.table
        lx = np.abs(np.diff(vals, axis=0)) / np.diff(xg)[:, None] if xg.size > 1 else np.zeros(1)
        lu = np.abs(np.diff(vals, axis=1)) / np.diff(ug)[None, :]
        return float(math.hypot(np.max(lx), np.max(lu)))

    @property
    def M_tilde(self):
        if self.kind == "user_table":
            if self.M_tilde_decl is not None:
                return float(self.M_tilde_decl)
            return float(np.max(np.abs(self.zero_control(self.table[0]))))
        return 0.0

    @property
    def M(self):
        """Control bound realizing the delta-sphere (closed form for built-ins)."""
        if self.kind == "calculus_of_variations":
            return float(self.delta)
        if self.kind == "bounded_speed":
            return self.delta / math.sqrt(self.C ** 2 - self.delta ** 2)
        xg = self.table[0]
        us = [self.direction_control(x, s) for x in xg for s in (-1.0, 1.0)]
        return float(max(np.max(np.abs(us)), self.M_tilde))

    # -- inversion -----------------------------------------------------------

    def invert_dynamics(self, x0, u, v):
        """Control ``u'`` near ``u`` with ``f(x0, u') = v``.

        Raises:
            DomainError: if ``v`` lies outside the ball of radius ``eta(|u|)``
                around ``f(x0, u)``.
        """
        u = as_points(u, self.dimension)
        v = as_points(v, self.dimension)
        R = float(np.max(_norm(u)))
        gap = float(np.max(_norm(v - self.f(x0, u))))
        eta = self.eta(R)
        if gap > eta * (1 + 1e-12):
            raise DomainError(f"velocity lies {gap:.6g} from f(x0, u), outside the inversion "
                              f"ball eta(R={R:.6g}) = {eta:.6g}")
        if self.kind == "calculus_of_variations":
            return v.copy()
        if self.kind == "bounded_speed":
            return self._bounded_inverse(v)
        return self._newton(x0, u, v)

    def _bounded_inverse(self, v):
        v2 = np.sum(v * v, axis=-1, keepdims=True)
        if np.any(v2 >= self.C ** 2):
            raise DomainError(f"speed {math.sqrt(float(np.max(v2))):.6g} not below C = {self.C}")
        return v / np.sqrt(self.C ** 2 - v2)

    def _newton(self, x0, u, v, max_iter=50):
        x0 = np.broadcast_to(as_points(x0, 1)[..., 0], v.shape[:-1])
        u, v = np.broadcast_arrays(u, v)
        out = np.empty(v.shape)
        lo, hi = self.table[1][0], self.table[1][-1]
        for idx in np.ndindex(v.shape[:-1]):
            x, w, target = float(x0[idx]), float(u[idx][0]), float(v[idx][0])
            r = float(self.f(x, w)[0]) - target
            for _ in range(max_iter):
                if abs(r) <= NEWTON_TOL:
                    break
                hstep = 1e-7
                slope = (float(self.f(x, min(w + hstep, hi))[0])
                         - float(self.f(x, max(w - hstep, lo))[0])) / (min(w + hstep, hi) - max(w - hstep, lo))
                if slope == 0.0:
                    break
                step = -r / slope
                for _ in range(30):
                    cand = min(max(w + step, lo), hi)
                    rc = float(self.f(x, cand)[0]) - target
                    if abs(rc) < abs(r):
                        break
                    step *= 0.5
                else:
                    break
                w, r = cand, rc
            if abs(r) > NEWTON_TOL:
                raise ModelContractError(f"Newton inversion did not converge at x={x:.6g}, "
                                         f"v={target:.6g} (residual {abs(r):.3g})")
            out[idx] = w
        return out

    def zero_control(self, x):
        """Control with ``f(x, u) = 0`` and ``|u| <= M_tilde``."""
        x = as_points(x, self.dimension)
        if self.kind != "user_table":
            return np.zeros(x.shape)
        seed = np.zeros(x.shape)
        return self._newton(x[..., 0], seed, np.zeros(x.shape))

    def direction_control(self, x, v_unit):
        """Control with ``f(x, u) = delta * v_unit``."""
        v_unit = as_points(v_unit, self.dimension)
        if np.any(np.abs(_norm(v_unit) - 1.0) > 1e-12):
            raise DomainError("direction must be a unit vector")
        target = self.delta * v_unit
        if self.kind == "calculus_of_variations":
            return target.copy()
        if self.kind == "bounded_speed":
            return self._bounded_inverse(target)
        u0 = self.zero_control(x)
        return self.invert_dynamics(x, u0, target)

    def control_for_velocity(self, x, v, radius):
        """Smallest-norm control of norm <= ``radius`` realizing velocity ``v``.

        Unlike :meth:`invert_dynamics` this is a global inverse, used to
        translate lattice velocities into controls. Returns NaN where no such
        control exists.
        """
        v = as_points(v, self.dimension)
        if self.kind == "calculus_of_variations":
            out = v.copy()
        elif self.kind == "bounded_speed":
            v2 = np.sum(v * v, axis=-1, keepdims=True)
            with np.errstate(invalid="ignore", divide="ignore"):
                out = np.where(v2 < self.C ** 2, v / np.sqrt(np.maximum(self.C ** 2 - v2, 0.0)), np.nan)
        else:
            out = self._table_preimage(x, v, radius)
        bad = _norm(out) > radius * (1 + 1e-12)
        out[bad] = np.nan
        return out

    def _table_preimage(self, x, v, radius):
        R = min(radius, self.u_limit)
        x = float(np.ravel(x)[0])
        ug = self.table[1]
        nodes = np.concatenate([[-R], ug[(ug > -R) & (ug < R)], [R]])
        fn = self.f(x, nodes)[..., 0]
        out = np.full(v.shape, np.nan)
        for idx in np.ndindex(v.shape[:-1]):
            target = float(v[idx][0])
            g = fn - target
            best = None
            for i in range(nodes.size - 1):
                a, b = nodes[i], nodes[i + 1]
                if g[i] == 0.0:
                    root = a
                elif g[i] * g[i + 1] < 0:
                    root = brentq(lambda w: float(self.f(x, w)[0]) - target, a, b, xtol=1e-14)
                elif i == nodes.size - 2 and g[i + 1] == 0.0:
                    root = b
                else:
                    continue
                if best is None or abs(root) < abs(best):
                    best = root
            if best is not None:
                out[idx] = best
        return out

    def to_dict(self):
        d = {"kind": self.kind, "dimension": self.dimension, "delta": self.delta}
        if self.kind == "bounded_speed":
            d["C"] = self.C
        if self.kind == "user_table":
            xg, ug, vals = self.table
            d.update(eta=self.eta_decl, lip_H=self.lip_H_decl, M_tilde=self.M_tilde_decl,
                     table_sha256=hashlib.sha256(
                         np.concatenate([xg, ug, vals.ravel()]).tobytes()).hexdigest())
        return d


# ----------------------------------------------------------------------------
# running costs l(u)


@dataclass(frozen=True)
class PowerCost:
    """``l(u) = coef * |u|^beta``; ``coef`` defaults to ``1/beta``."""

    beta: float = 2.0
    coef: float | None = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError("must be > 0", "model.lagrangian.beta")
        if self.coef is None:
            object.__setattr__(self, "coef", 1.0 / self.beta)
        if not self.coef > 0:
            raise ConfigError("must be > 0", "model.lagrangian.coef")

    def __call__(self, u):
        return self.coef * _norm(u) ** self.beta

    def radial(self, r):
        return self.coef * np.abs(r) ** self.beta

    def gradient(self, u):
        r = _norm(u)[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            g = self.coef * self.beta * r ** (self.beta - 2.0) * u
        return np.where(r > 0, g, 0.0)

    def lip(self, R):
        if R == 0:
            return 0.0 if self.beta > 1 else (self.coef if self.beta == 1 else math.inf)
        if self.beta < 1:
            return math.inf
        return self.coef * self.beta * R ** (self.beta - 1.0)

    def to_dict(self):
        return {"kind": "power", "beta": self.beta, "coef": self.coef}


@dataclass(frozen=True)
class ConstantCost:
    """``l(u) = c``: violates the growth condition on purpose."""

    c: float = 1.0

    def __call__(self, u):
        return np.full(np.shape(u)[:-1], float(self.c))

    def radial(self, r):
        return np.full(np.shape(r), float(self.c))

    def gradient(self, u):
        return np.zeros(np.shape(u))

    def lip(self, R):
        return 0.0

    def to_dict(self):
        return {"kind": "constant", "c": self.c}


@dataclass(frozen=True)
class CallableCost:
    """Radial running cost given by a callable ``g(|u|)``, nondecreasing."""

    g: Callable
    lip_fn: Callable
    name: str = "callable"

    def __call__(self, u):
        return np.asarray(self.g(_norm(u)), dtype=float)

    def radial(self, r):
        return np.asarray(self.g(np.abs(r)), dtype=float)

    def gradient(self, u):
        r = _norm(u)[..., None]
        hstep = 1e-6
        dg = (self.g(r + hstep) - self.g(np.maximum(r - hstep, 0.0))) / (r + hstep - np.maximum(r - hstep, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, dg * u / r, 0.0)

    def lip(self, R):
        return float(self.lip_fn(R))

    def to_dict(self):
        return {"kind": "callable", "name": self.name}


# ----------------------------------------------------------------------------
# macro terms m(t, x)


@dataclass(frozen=True)
class ZeroMacro:
    def __call__(self, t, x):
        return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1]))

    def bounds(self, T):
        return 0.0, 0.0

    def lip_t(self, T):
        return 0.0

    def modulus_x(self, r, T):
        return 0.0 * r

    @property
    def x_dependent(self):
        return False

    def to_dict(self):
        return {"kind": "zero"}


@dataclass(frozen=True)
class TimeLinearMacro:
    """``m(t, x) = rate * t``."""

    rate: float = 0.1

    def __call__(self, t, x):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(self.rate * t, np.broadcast_shapes(t.shape, np.shape(x)[:-1])).copy()

    def bounds(self, T):
        return min(0.0, self.rate * T), max(0.0, self.rate * T)

    def lip_t(self, T):
        return abs(self.rate)

    def modulus_x(self, r, T):
        return 0.0 * r

    @property
    def x_dependent(self):
        return False

    def to_dict(self):
        return {"kind": "time_linear", "rate": self.rate}


@dataclass(frozen=True)
class ClippedTimeSpaceMacro:
    """``m(t, x) = rate * t * clip(x_1, -clip, clip)``."""

    rate: float = 0.1
    clip: float = 1.0

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return self.rate * np.asarray(t, dtype=float) * np.clip(x[..., 0], -self.clip, self.clip)

    def bounds(self, T):
        b = abs(self.rate) * T * self.clip
        return -b, b

    def lip_t(self, T):
        return abs(self.rate) * self.clip

    def modulus_x(self, r, T):
        return abs(self.rate) * T * np.minimum(r, 2 * self.clip)

    @property
    def x_dependent(self):
        return True

    def to_dict(self):
        return {"kind": "clipped_time_space", "rate": self.rate, "clip": self.clip}


@dataclass(frozen=True)
class SmoothMacro:
    """``m(t, x) = a * t + b * sin(freq * x_1)``."""

    a: float = 0.0
    b: float = 0.2
    freq: float = 1.0

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return self.a * np.asarray(t, dtype=float) + self.b * np.sin(self.freq * x[..., 0])

    def bounds(self, T):
        return min(0.0, self.a * T) - abs(self.b), max(0.0, self.a * T) + abs(self.b)

    def lip_t(self, T):
        return abs(self.a)

    def modulus_x(self, r, T):
        return np.minimum(abs(self.b * self.freq) * r, 2 * abs(self.b))

    @property
    def x_dependent(self):
        return self.b != 0.0

    def to_dict(self):
        return {"kind": "smooth", "a": self.a, "b": self.b, "freq": self.freq}


# ----------------------------------------------------------------------------
# terminal costs psi(x)


@dataclass(frozen=True)
class ZeroTerminal:
    def __call__(self, x):
        return np.zeros(np.shape(x)[:-1])

    def modulus(self, r):
        return 0.0 * r

    def sup(self, box_radius):
        return 0.0

    def to_dict(self):
        return {"kind": "zero"}


@dataclass(frozen=True)
class AbsTerminal:
    """``psi(x) = coef * min(|x|, cap)``."""

    coef: float = 1.0
    cap: float = math.inf

    def __call__(self, x):
        return self.coef * np.minimum(_norm(np.asarray(x, dtype=float)), self.cap)

    def modulus(self, r):
        return abs(self.coef) * r

    def sup(self, box_radius):
        return abs(self.coef) * min(box_radius, self.cap)

    def to_dict(self):
        return {"kind": "abs", "coef": self.coef, "cap": None if math.isinf(self.cap) else self.cap}


@dataclass(frozen=True)
class SmoothAbsTerminal:
    """``psi(x) = coef * (sqrt(|x|^2 + width^2) - width)``: a C^1 version of coef*|x|."""

    coef: float = 1.0
    width: float = 0.5

    def __post_init__(self):
        if not self.width > 0:
            raise ConfigError("must be > 0", "model.psi.width")

    def __call__(self, x):
        r2 = np.sum(np.square(np.asarray(x, dtype=float)), axis=-1)
        return self.coef * (np.sqrt(r2 + self.width ** 2) - self.width)

    def modulus(self, r):
        return abs(self.coef) * r

    def sup(self, box_radius):
        return abs(self.coef) * box_radius

    def to_dict(self):
        return {"kind": "smooth_abs", "coef": self.coef, "width": self.width}


# ----------------------------------------------------------------------------
# Lagrangian and model


@dataclass(frozen=True)
class LagrangianSpec:
    """``L(t, x, y, u) = macro(t, x) + V(y) + l(u)`` plus terminal cost ``psi``."""

    running: object = field(default_factory=PowerCost)
    macro: object = field(default_factory=ZeroMacro)
    env: EnvironmentHandle | None = None
    psi: object = field(default_factory=ZeroTerminal)
    lam: float = 1.0
    theta: Callable | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError("must be > 0", "model.lagrangian.lambda")

    @property
    def v_bounds(self):
        if self.env is None:
            return 0.0, 0.0
        return self.env.spec.v_min, self.env.spec.v_max

    def potential(self, y):
        if self.env is None:
            return np.zeros(np.shape(y)[:-1])
        return evaluate_potential(self.env, y)

    def with_env(self, env):
        return LagrangianSpec(self.running, self.macro, env, self.psi, self.lam, self.theta)

    def to_dict(self):
        return {"running": self.running.to_dict(), "macro": self.macro.to_dict(),
                "env": None if self.env is None else {**self.env.spec.to_dict(), "seed": self.env.seed,
                                                      "offset": list(self.env.offset)},
                "psi": self.psi.to_dict(), "lambda": self.lam}


@dataclass(frozen=True)
class ModelSpec:
    """Dynamics, Lagrangian and horizon ``T``."""

    dynamics: DynamicsSpec
    lagrangian: LagrangianSpec
    T: float = 1.0

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError("must be > 0", "model.T")
        env = self.lagrangian.env
        if env is not None and env.dimension != self.dynamics.dimension:
            raise ConfigError("environment and dynamics dimensions differ", "environment.dimension")

    @property
    def dimension(self):
        return self.dynamics.dimension

    @property
    def env(self):
        return self.lagrangian.env

    def with_env(self, env):
        return ModelSpec(self.dynamics, self.lagrangian.with_env(env), self.T)

    def eval_f(self, x, u):
        return self.dynamics.f(x, u)

    def eval_L(self, t, x, y, u):
        lag = self.lagrangian
        d = self.dimension
        return (lag.macro(t, as_points(x, d)) + lag.potential(as_points(y, d))
                + lag.running(as_points(u, d)))

    # constants -----------------------------------------------------------

    @property
    def macro_bounds(self):
        return self.lagrangian.macro.bounds(self.T)

    def L_floor(self):
        """Lower bound of L over everything: ``macro_min + v_min + min l``."""
        return self.macro_bounds[0] + self.lagrangian.v_bounds[0] + float(self.lagrangian.running.radial(0.0))

    def L_star(self, u):
        """``L_*(u) = inf_{t, x, y} L(t, x, y, u)``."""
        u = as_points(u, self.dimension)
        return self.macro_bounds[0] + self.lagrangian.v_bounds[0] + self.lagrangian.running(u)

    def L_star_radial(self, r):
        return self.macro_bounds[0] + self.lagrangian.v_bounds[0] + self.lagrangian.running.radial(r)

    def L_upper(self, R):
        """``L^*(R) = sup_{|u| <= R} |L|``."""
        hi = self.macro_bounds[1] + self.lagrangian.v_bounds[1] + float(self.lagrangian.running.radial(R))
        lo = self.L_floor()
        return max(abs(hi), abs(lo))

    def lip_L_u(self, R):
        return self.lagrangian.running.lip(R)

    def lip_L_t(self):
        return self.lagrangian.macro.lip_t(self.T)

    def m_L(self, r):
        """Modulus of L in the slow variable x."""
        return self.lagrangian.macro.modulus_x(np.asarray(r, dtype=float), self.T)

    def lip_L_y(self):
        env = self.lagrangian.env
        return 0.0 if env is None else env.spec.lipschitz()

    def gamma(self, r):
        """Growth ratio ``L_*(r) / f^*(r + lambda)`` (radial, shifted so L_* >= 0)."""
        num = float(self.L_star_radial(r)) - self.L_floor()
        return num / max(self.dynamics.f_star(r + self.lagrangian.lam), 1e-300)

    def theta(self, u):
        """``Theta(u)``: user supplied, else ``J_f(u)^{-T} grad l(u)``."""
        u = as_points(u, self.dimension)
        if self.lagrangian.theta is not None:
            return as_points(self.lagrangian.theta(u), self.dimension)
        J = self.dynamics.jacobian(0.0 if self.dimension == 1 else np.zeros(self.dimension), u)
        g = self.lagrangian.running.gradient(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            Jt = np.swapaxes(J, -1, -2)
            det = np.linalg.det(Jt)
            safe = np.where(np.abs(det)[..., None, None] > 1e-300, Jt, np.eye(self.dimension))
            out = np.linalg.solve(safe, g[..., None])[..., 0]
        return np.where(np.abs(det)[..., None] > 1e-300, out, np.inf)

    def to_dict(self):
        return {"dynamics": self.dynamics.to_dict(), "lagrangian": self.lagrangian.to_dict(), "T": self.T}

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ----------------------------------------------------------------------------
# effective radius


def radius_ladder(r_max=1e6):
    k = np.arange(0, int(4 * math.log2(r_max / 0.125)) + 2)
    ladder = 0.125 * 2.0 ** (k / 4.0)
    return ladder[ladder <= r_max * (1 + 1e-12)]


def truncation_radius(model, W, h=1.0, safety=2.0, r_max=1e6):
    """Smallest ladder radius ``R`` confining near-optimal controls.

    ``W`` bounds the cost rate (cost <= W*h over an interval of length h).
    The conditions are those needed for the control-repair construction with
    cost shifted so ``L >= 0``; ``safety`` multiplies the main inequality.

    Raises:
        CoercivityError: if no ladder radius up to ``r_max`` works.
    """
    dyn = model.dynamics
    c0 = model.L_floor()
    if W < float(model.L_star_radial(0.0)) - 1e-12:
        raise ValueError(f"W = {W} below L_*(0) = {float(model.L_star_radial(0.0))}")
    Wp = max(W - c0, 1e-12)
    lam = model.lagrangian.lam
    ladder = radius_ladder(r_max)
    ell = model.lagrangian.running.radial
    N = next((float(r) for r in ladder if float(ell(r)) - float(ell(0.0)) >= 2 * Wp), None)
    if N is None:
        raise CoercivityError(f"running cost never reaches 2W' = {2 * Wp:.6g} on radii <= {r_max:g}")
    lipH = dyn.lip_H(N)
    fN = dyn.f_star(N)
    c_W = 5 * h * model.lip_L_t() + 4 * model.lip_L_u(N) * lipH * fN
    rhs = safety * (c_W + model.L_upper(dyn.M) - c0)
    M = dyn.M
    for R in ladder:
        R = float(R)
        if R <= M or R - lam <= N:
            continue
        g = model.gamma(R - lam)
        if not math.isfinite(g) or g * dyn.delta < rhs:
            continue
        beta_max = 2 * Wp / (dyn.delta * g)
        if beta_max > 0.5:
            continue
        if N + 2 * beta_max * lipH * fN > R:
            continue
        if 2 * beta_max * fN > dyn.eta(N):
            continue
        return R
    raise CoercivityError(f"no radius <= {r_max:g} satisfies the growth inequality for W = {W:.6g} "
                          f"(N = {N:.6g}, required gamma*delta >= {rhs:.6g})")


# ----------------------------------------------------------------------------
# assumption checks


@dataclass
class AssumptionResult:
    index: int
    name: str
    passed: bool
    worst_violation: float
    location: str
    detail: str = ""


@dataclass
class AssumptionReport:
    results: list

    @property
    def all_passed(self):
        return all(r.passed for r in self.results)

    def __getitem__(self, index):
        return next(r for r in self.results if r.index == index)

    def to_rows(self):
        return [{"assumption": r.index, "name": r.name, "passed": r.passed,
                 "worst_violation": r.worst_violation, "location": r.location,
                 "detail": r.detail} for r in self.results]


@dataclass
class SamplePlan:
    """Finite grids for the sampled assumption checks."""

    x: np.ndarray
    u: np.ndarray
    t: np.ndarray
    y: np.ndarray
    directions: np.ndarray
    shifts: np.ndarray
    tol: float = 1e-9


def default_plan(model, u_radius=3.0, n_u=41, box=1.0, seed=0):
    d = model.dimension
    rng = np.random.default_rng([seed, 11])
    if d == 1:
        u = np.linspace(-u_radius, u_radius, n_u)[:, None]
        x = np.linspace(-box, box, 9)[:, None]
        ang = np.array([[1.0], [-1.0]])
    else:
        g = np.linspace(-u_radius, u_radius, max(3, int(math.sqrt(n_u * 2))))
        u = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
        gx = np.linspace(-box, box, 5)
        x = np.stack(np.meshgrid(gx, gx, indexing="ij"), -1).reshape(-1, 2)
        th = np.linspace(0, 2 * np.pi, 8, endpoint=False)
        ang = np.stack([np.cos(th), np.sin(th)], -1)
    return SamplePlan(x=x, u=u, t=np.linspace(0.0, model.T, 5),
                      y=rng.uniform(-5, 5, size=(64, d)), directions=ang,
                      shifts=rng.uniform(-3, 3, size=(4, d)))


def _loc(**kw):
    parts = []
    for k, v in kw.items():
        arr = np.atleast_1d(np.asarray(v, dtype=float)).ravel()
        parts.append(f"{k}=" + ",".join(f"{c:.4g}" for c in arr))
    return " ".join(parts)


def check_assumptions(model, plan=None):
    """Sampled verification of the eight standing assumptions."""
    plan = plan or default_plan(model)
    dyn, lag = model.dynamics, model.lagrangian
    d = model.dimension
    tol = plan.tol
    out = []

    # 1 stationarity: exact shift equivariance of the environment
    worst, where = 0.0, "-"
    if lag.env is not None:
        for r in plan.shifts:
            a = evaluate_potential(shift_environment(lag.env, r), plan.y)
            b = evaluate_potential(lag.env, plan.y + r)
            err = np.abs(a - b)
            if err.max() > worst:
                worst, where = float(err.max()), _loc(r=r, y=plan.y[int(err.argmax())])
    out.append(AssumptionResult(1, "stationarity (shift equivariance)", worst <= 1e-12, worst, where))

    # 2 Lipschitz f and the speed bound f*
    u = plan.u
    uR = float(np.max(_norm(u)))
    worst, where = 0.0, "-"
    try:
        X = plan.x[:, None, :]
        F = dyn.f(X[..., :1] if d == 1 else X, u[None, :, :])
        speed_excess = _norm(F) - np.array([dyn.f_star(r) for r in _norm(u)])[None, :]
        i = np.unravel_index(np.argmax(speed_excess), speed_excess.shape)
        worst, where = max(0.0, float(speed_excess[i])), _loc(x=plan.x[i[0]], u=u[i[1]])
        L = dyn.lip_f(uR)
        du = _norm(u[:, None] - u[None, :])
        dF = _norm(F[0][:, None] - F[0][None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            excess = np.where(du > 0, dF - L * du, 0.0)
        j = np.unravel_index(np.argmax(excess), excess.shape)
        if excess[j] > worst:
            worst, where = float(excess[j]), _loc(u1=u[j[0]], u2=u[j[1]])
        if dyn.kind == "bounded_speed" and np.any(_norm(F) >= dyn.C):
            worst = max(worst, float(np.max(_norm(F)) - dyn.C))
        passed = worst <= tol
    except ExtrapolationError as exc:
        passed, where = False, str(exc)
    out.append(AssumptionResult(2, "Lipschitz dynamics and speed bound f*", passed, worst, where))

    # 3 finiteness and Lipschitz bounds of L
    rng = np.random.default_rng([0, 3])
    n = 512
    ts = rng.uniform(0, model.T, n)
    xs = rng.choice(plan.x, n)
    ys = rng.choice(plan.y, n)
    us = rng.choice(u, n)
    vals = model.eval_L(ts, xs, ys, us)
    low = model.L_star(us) - vals
    high = np.abs(vals) - model.L_upper(uR)
    worst = float(max(0.0, low.max(), high.max()))
    where = _loc(u=us[int(np.argmax(np.maximum(low, high)))])
    passed = bool(np.all(np.isfinite(vals))) and worst <= tol
    lu = model.lip_L_u(uR)
    ell = lag.running(u)
    du = _norm(u[:, None] - u[None, :])
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ex = np.where(du > 0, np.abs(ell[:, None] - ell[None, :]) - lu * du, 0.0)
    if np.nanmax(ex) > tol:
        passed = False
        worst = max(worst, float(np.nanmax(ex)))
    out.append(AssumptionResult(3, "finite L_*, L^* and Lipschitz L", passed, worst, where,
                                f"L^*({uR:.3g}) = {model.L_upper(uR):.6g}"))

    # 4 bounded terminal cost with modulus
    psi = lag.psi
    px = psi(plan.x)
    dx = _norm(plan.x[:, None] - plan.x[None, :])
    ex = np.abs(px[:, None] - px[None, :]) - psi.modulus(dx)
    worst = float(max(0.0, ex.max()))
    out.append(AssumptionResult(4, "psi bounded with modulus", bool(np.all(np.isfinite(px))) and worst <= tol,
                                worst, "-", f"sup psi on plan = {float(np.max(np.abs(px))):.6g}"))

    # 5 zero control and delta-sphere
    worst, where, detail = 0.0, "-", ""
    try:
        xs5 = plan.x[:, :1] if d == 1 else plan.x
        z = dyn.zero_control(xs5)
        res = _norm(dyn.f(xs5, z))
        worst = float(res.max())
        M, Mt = dyn.M, dyn.M_tilde
        if float(np.max(_norm(z))) > Mt + 1e-12 or Mt > M + 1e-12:
            worst = max(worst, float(np.max(_norm(z))) - min(Mt, M))
        for v in plan.directions:
            uc = dyn.direction_control(xs5, np.broadcast_to(v, plan.x.shape))
            err = _norm(dyn.f(xs5, uc) - dyn.delta * v)
            over = float(np.max(_norm(uc))) - M
            if err.max() > worst or over > worst:
                worst, where = max(float(err.max()), over), _loc(direction=v)
        detail = f"M = {M:.6g}, M_tilde = {Mt:.6g}, delta = {dyn.delta:.6g}"
        passed = worst <= 1e-10
    except (DomainError, ModelContractError, ExtrapolationError) as exc:
        passed, worst, where = False, math.inf, str(exc)
    out.append(AssumptionResult(5, "zero control and delta-sphere reachability", passed, worst, where, detail))

    # 6 local inverse
    worst, where = 0.0, "-"
    try:
        x0 = plan.x[len(plan.x) // 2]
        x0 = x0[:1] if d == 1 else x0
        for uu in u:
            R = float(_norm(uu))
            eta = dyn.eta(R)
            fu = dyn.f(x0, uu)
            for v in plan.directions:
                rad = 0.9 * min(eta, 1.0)
                target = fu + rad * v
                up = dyn.invert_dynamics(x0, uu, target)
                err = float(_norm(dyn.f(x0, up) - target).max())
                lip_gap = float(_norm(up - uu).max()) - dyn.lip_H(R) * rad - 1e-10
                if max(err, lip_gap) > worst:
                    worst, where = max(err, lip_gap), _loc(u=uu, v=target)
        passed = worst <= 1e-10
    except (DomainError, ModelContractError, ExtrapolationError) as exc:
        passed, worst, where = False, math.inf, str(exc)
    out.append(AssumptionResult(6, "local inverse H with radius eta and Lipschitz bound", passed, worst, where))

    # 7 growth: gamma -> infinity and the Theta inequality
    ladder = radius_ladder(1e4)
    tail = np.array([model.gamma(r) for r in ladder[-12:]])
    grows = bool(np.all(np.diff(tail) > 0) and tail[-1] > tail[0] * 1.5)
    worst, where = 0.0, "-"
    try:
        x0 = plan.x[len(plan.x) // 2]
        x0 = x0[:1] if d == 1 else x0
        F = dyn.f(x0, u)
        Ls = model.L_star(u)
        Th = model.theta(u)
        lhs = Ls[:, None] - Ls[None, :]
        rhs = np.einsum("jk,ijk->ij", Th, F[:, None, :] - F[None, :, :])
        with np.errstate(invalid="ignore"):
            viol = np.where(np.isfinite(rhs), rhs - lhs, np.where(np.isnan(rhs), 0.0, np.inf))
        # a zero velocity change carries no Theta information: rhs is 0 there
        same = _norm(F[:, None, :] - F[None, :, :]) == 0
        viol = np.where(same, -lhs, viol)
        i = np.unravel_index(np.argmax(viol), viol.shape)
        worst, where = max(0.0, float(viol[i])), _loc(u1=u[i[0]], u2=u[i[1]])
    except ExtrapolationError as exc:
        worst, where = math.inf, str(exc)
    scale = max(1.0, float(np.max(np.abs(Ls))))
    part2 = worst <= tol * scale
    out.append(AssumptionResult(7, "growth: gamma -> inf and Theta inequality", grows and part2, worst, where,
                                f"part1 {'pass' if grows else 'fail'}, part2 {'pass' if part2 else 'fail'}"))

    # 8 convex image: midpoints of f(x, U^R) reachable within U^R
    worst, where = 0.0, "-"
    try:
        x0 = plan.x[len(plan.x) // 2]
        x0 = x0[:1] if d == 1 else x0
        F = dyn.f(x0, u)
        sel = np.arange(0, len(u), max(1, len(u) // 16))
        for i in sel:
            for j in sel:
                mid = 0.5 * (F[i] + F[j])
                uc = dyn.control_for_velocity(x0, mid, uR)
                if np.any(np.isnan(uc)):
                    worst, where = math.inf, _loc(u1=u[i], u2=u[j])
                    break
                err = float(_norm(dyn.f(x0, uc) - mid).max())
                if err > worst:
                    worst, where = err, _loc(u1=u[i], u2=u[j])
            if math.isinf(worst):
                break
        passed = worst <= 1e-9
    except (DomainError, ExtrapolationError) as exc:
        passed, worst, where = False, math.inf, str(exc)
    out.append(AssumptionResult(8, "convex velocity image f(x, U^R)", passed, worst, where))

    return AssumptionReport(out)
