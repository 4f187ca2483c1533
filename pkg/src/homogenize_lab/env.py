"""Stationary random potentials with an exact translation group.

A realization is a pure function of ``(spec, seed)``; all randomness comes from
a counter-based hash of ``(seed, stream, lattice index)`` so any point can be
evaluated without generating the rest of the field. The translation
``shift_environment(h, r)`` only moves the query (``offset``), never the data.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError

KINDS = ("periodic", "checkerboard", "shot_noise")
PROFILES = ("cosine", "bump")

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_STREAM_IDS = {"checker": 1, "site": 2, "pos": 3, "mark": 4, "mean": 5}


def _splitmix64(z):
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK
    return z ^ (z >> np.uint64(31))


def hash_uniform(seed, stream, cells, salt=0):
    """Uniform [0, 1) numbers keyed by ``(seed, stream, salt, *cell index)``.

    ``cells`` is an integer array of shape (..., d); the result has shape (...).
    """
    cells = np.asarray(cells, dtype=np.int64)
    with np.errstate(over="ignore"):
        key = (seed ^ (_STREAM_IDS[stream] * 0x632BE59BD9B4E019)) & 0xFFFFFFFFFFFFFFFF
        h = _splitmix64(np.uint64(key))
        h = _splitmix64(h ^ np.uint64(salt))
        h = np.broadcast_to(h, cells.shape[:-1]).copy()
        for a in range(cells.shape[-1]):
            h = _splitmix64(h ^ cells[..., a].astype(np.uint64))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


@dataclass(frozen=True)
class EnvironmentSpec:
    """Law of the random potential.

    ``period`` is the period (periodic kind) or the cell side (checkerboard).
    Shot noise ignores it and uses ``intensity`` and ``bump_radius``.
    """

    kind: str
    period: float = 1.0
    amplitude_range: tuple = (0.0, 2.0)
    dimension: int = 1
    bump_profile: str = "cosine"
    intensity: float = 4.0
    bump_radius: float = 0.5
    margin: float = 0.1
    subcell: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "amplitude_range",
                           tuple(float(v) for v in self.amplitude_range))
        self.validate()

    @property
    def cell_size(self):
        return self.period

    @property
    def v_min(self):
        return self.amplitude_range[0]

    @property
    def v_max(self):
        return self.amplitude_range[1]

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kind {self.kind!r}, expected one of {KINDS}", "environment.kind")
        if len(self.amplitude_range) != 2:
            raise ConfigError("expected [v_min, v_max]", "environment.amplitude_range")
        lo, hi = self.amplitude_range
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise ConfigError(f"need finite v_min <= v_max, got {lo}, {hi}",
                              "environment.amplitude_range")
        if not self.period > 0:
            raise ConfigError("must be > 0", "environment.period")
        if self.dimension not in (1, 2):
            raise ConfigError("must be 1 or 2", "environment.dimension")
        if self.kind == "shot_noise":
            if not self.intensity > 0:
                raise ConfigError("must be > 0", "environment.intensity")
            if not self.bump_radius > 0:
                raise ConfigError("must be > 0", "environment.bump_radius")
            if self.bump_profile not in PROFILES:
                raise ConfigError(f"expected one of {PROFILES}", "environment.bump_profile")
            q = self.quantum
            if self.intensity * q ** self.dimension > 1.0:
                raise ConfigError("subcell too coarse for the intensity "
                                  "(need intensity * subcell^d <= 1)", "environment.subcell")
        if self.kind == "checkerboard" and not 0 < self.margin <= 0.5:
            raise ConfigError("must lie in (0, 0.5]", "environment.margin")

    @property
    def quantum(self):
        """Side of the Poisson quantization subcell (shot noise only)."""
        if self.subcell is not None:
            return float(self.subcell)
        q = self.bump_radius / 4.0
        return min(q, (0.5 / self.intensity) ** (1.0 / self.dimension))

    def lipschitz(self):
        """Lipschitz constant of the field in y (the y-part of the modulus m_L)."""
        span = self.v_max - self.v_min
        if self.kind == "periodic":
            return span / 2.0 * 2.0 * math.pi / self.period * math.sqrt(self.dimension) / self.dimension
        if self.kind == "checkerboard":
            return span / (2.0 * self.margin * self.period) * math.sqrt(self.dimension)
        # subcells that can hold a point within one bump radius of a query
        n_near = (math.ceil(2.0 * self.bump_radius / self.quantum) + 1) ** self.dimension
        return span * n_near * _profile_slope(self.bump_profile) / self.bump_radius

    def to_dict(self):
        d = {"kind": self.kind, "period": self.period,
             "amplitude_range": list(self.amplitude_range), "dimension": self.dimension}
        if self.kind == "shot_noise":
            d.update(bump_profile=self.bump_profile, intensity=self.intensity,
                     bump_radius=self.bump_radius, subcell=self.quantum)
        if self.kind == "checkerboard":
            d["margin"] = self.margin
        return d

    @classmethod
    def from_dict(cls, d):
        known = {"kind", "period", "cell_size", "amplitude_range", "dimension", "bump_profile",
                 "intensity", "bump_radius", "margin", "subcell"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown keys {sorted(extra)}", "environment")
        d = dict(d)
        if "cell_size" in d:
            d["period"] = d.pop("cell_size")
        if "kind" not in d:
            raise ConfigError("missing", "environment.kind")
        return cls(**d)


def _profile(kind, s):
    s = np.minimum(s, 1.0)
    if kind == "cosine":
        return 0.5 * (1.0 + np.cos(np.pi * s))
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        val = np.exp(1.0 - 1.0 / (1.0 - s * s))
    return np.where(s < 1.0, val, 0.0)


def _profile_slope(kind):
    if kind == "cosine":
        return math.pi / 2.0
    s = np.linspace(0.0, 0.999, 20001)
    return float(np.max(np.abs(np.gradient(_profile("bump", s), s))))


@dataclass(frozen=True)
class EnvironmentHandle:
    """A realization ``omega`` together with the accumulated shift ``offset``."""

    spec: EnvironmentSpec
    seed: int
    offset: tuple = field(default=None)

    def __post_init__(self):
        off = self.offset
        if off is None:
            off = (0.0,) * self.spec.dimension
        off = tuple(float(v) for v in np.atleast_1d(off))
        if len(off) != self.spec.dimension:
            raise ConfigError("offset dimension mismatch", "environment.offset")
        object.__setattr__(self, "offset", off)

    @property
    def dimension(self):
        return self.spec.dimension

    def evaluate(self, y):
        return evaluate_potential(self, y)

    def canonical_phase(self, y):
        """Point equivalent to ``y`` under the field's exact symmetries.

        Periodic fields reduce modulo the period; other kinds return ``y``.
        """
        pts = as_points(y, self.dimension) + np.asarray(self.offset)
        if self.spec.kind == "periodic":
            return np.mod(pts, self.spec.period)
        return pts


def as_points(y, d):
    """Coerce ``y`` to a float array with trailing axis of length ``d``."""
    arr = np.asarray(y, dtype=float)
    if d == 1 and (arr.ndim == 0 or arr.shape[-1] != 1):
        arr = arr[..., None]
    if arr.shape[-1] != d:
        raise ValueError(f"expected points with {d} coordinates, got shape {arr.shape}")
    return arr


def create_environment(spec, seed):
    """Realize ``spec`` with ``seed``; the periodic kind ignores the seed."""
    if not isinstance(spec, EnvironmentSpec):
        spec = EnvironmentSpec.from_dict(spec)
    spec.validate()
    seed = int(seed)
    if not -(2 ** 63) <= seed < 2 ** 64:
        raise ConfigError("seed must fit in 64 bits", "seed")
    return EnvironmentHandle(spec, seed & 0xFFFFFFFFFFFFFFFF)


def shift_environment(h, r):
    """Return the handle of ``phi_r omega``: evaluate(shift(h, r), y) = evaluate(h, y + r)."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    return replace(h, offset=tuple(float(o + v) for o, v in zip(h.offset, r)))


def evaluate_potential(h, y):
    """Value of the potential at ``y`` (shape (..., d) or scalar in 1-D)."""
    pts = as_points(y, h.dimension)
    if any(h.offset):
        pts = pts + np.asarray(h.offset)
    spec = h.spec
    if spec.kind == "periodic":
        return _periodic(spec, pts)
    if spec.kind == "checkerboard":
        return _checkerboard(spec, h.seed, pts)
    return _shot_noise(spec, h.seed, pts)


def _periodic(spec, pts):
    span = spec.v_max - spec.v_min
    c = np.mean(np.cos(2.0 * np.pi * pts / spec.period), axis=-1)
    return spec.v_min + 0.5 * span * (1.0 - c)


def _checkerboard(spec, seed, pts):
    # tensor-product blend of the i.i.d. cell amplitudes across a margin at every face
    L = spec.period
    m = spec.margin * L
    cell = np.floor(pts / L)
    local = pts - cell * L
    d = pts.shape[-1]
    left = np.clip((m - local) / (2.0 * m), 0.0, 0.5)
    right = np.clip((local - (L - m)) / (2.0 * m), 0.0, 0.5)
    weights = [(left[..., a], 1.0 - left[..., a] - right[..., a], right[..., a]) for a in range(d)]
    out = np.zeros(pts.shape[:-1])
    span = spec.v_max - spec.v_min
    for shifts in np.ndindex(*(3,) * d):
        w = np.ones(pts.shape[:-1])
        for a, s in enumerate(shifts):
            w = w * weights[a][s]
        if not np.any(w):
            continue
        idx = cell.astype(np.int64) + (np.asarray(shifts) - 1)
        amp = spec.v_min + span * hash_uniform(seed, "checker", idx)
        out = out + w * amp
    return out


def _shot_noise(spec, seed, pts):
    q = spec.quantum
    p_keep = spec.intensity * q ** spec.dimension
    reach = math.ceil(spec.bump_radius / q)
    base = np.floor(pts / q).astype(np.int64)
    total = np.zeros(pts.shape[:-1])
    d = pts.shape[-1]
    for off in np.ndindex(*(2 * reach + 1,) * d):
        idx = base + (np.asarray(off) - reach)
        keep = hash_uniform(seed, "site", idx) < p_keep
        if not np.any(keep):
            continue
        site = np.stack([(idx[..., a] + hash_uniform(seed, "pos", idx, salt=a)) * q
                         for a in range(d)], axis=-1)
        dist = np.sqrt(np.sum((pts - site) ** 2, axis=-1)) / spec.bump_radius
        mark = hash_uniform(seed, "mark", idx)
        total = total + np.where(keep & (dist < 1.0), mark * _profile(spec.bump_profile, dist), 0.0)
    span = spec.v_max - spec.v_min
    return spec.v_min + span * -np.expm1(-total)


def estimate_spatial_mean(h, box_side, n_samples):
    """Monte-Carlo mean of the potential over ``[0, box_side]^d`` (handle coordinates)."""
    if not box_side > 0:
        raise ValueError("box_side must be > 0")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng([h.seed, _STREAM_IDS["mean"]])
    pts = rng.uniform(0.0, box_side, size=(int(n_samples), h.dimension))
    vals = evaluate_potential(h, pts)
    return float(np.mean(vals))


def field_dump(h, lo, hi, n):
    """Sample the field on a uniform grid; returns (points (m, d), values (m,))."""
    d = h.dimension
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (d,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (d,))
    axes = [np.linspace(lo[a], hi[a], n) for a in range(d)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    return mesh, evaluate_potential(h, mesh)


def write_field_csv(path, h, lo, hi, n):
    pts, vals = field_dump(h, lo, hi, n)
    cols = ["y"] if h.dimension == 1 else [f"y{a + 1}" for a in range(h.dimension)]
    header = {"kind": "environment_field", "spec": h.spec.to_dict(), "seed": h.seed,
              "offset": [float(o) for o in h.offset]}
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols + ["value"])
        for p, v in zip(pts, vals):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])
