"""Multilinear interpolation on rectilinear grids.

Fractions within ``SNAP`` of a node are snapped onto it so that a query landing
on a node (up to rounding) returns the stored value bit-for-bit; the dynamic
programming oracles rely on this.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import ExtrapolationError

SNAP = 1e-9


def _locate(grid, q, axis_name, clamp):
    """Return (lower index, fraction) of ``q`` on a sorted 1-D ``grid``."""
    n = grid.size
    if n == 1:
        if not clamp and np.any(np.abs(q - grid[0]) > SNAP * max(1.0, abs(grid[0]))):
            raise ExtrapolationError(f"query off the single-node axis {axis_name}")
        return np.zeros(q.shape, dtype=np.intp), np.zeros(q.shape)
    lo, hi = grid[0], grid[-1]
    tol = SNAP * max(1.0, hi - lo)
    if clamp:
        q = np.clip(q, lo, hi)
    elif np.any(q < lo - tol) or np.any(q > hi + tol):
        bad = q[(q < lo - tol) | (q > hi + tol)].ravel()[0]
        raise ExtrapolationError(
            f"axis {axis_name}: query {bad:.6g} outside [{lo:.6g}, {hi:.6g}]")
    idx = np.searchsorted(grid, q, side="right") - 1
    idx = np.clip(idx, 0, n - 2)
    g0 = grid[idx]
    width = grid[idx + 1] - g0
    frac = (q - g0) / width
    frac = np.where(np.abs(frac) < SNAP, 0.0, frac)
    frac = np.where(np.abs(frac - 1.0) < SNAP, 1.0, frac)
    return idx, np.clip(frac, 0.0, 1.0)


def multilinear(grids, values, points, clamp=False, names=None):
    """Interpolate ``values`` (shape = grid sizes) at ``points`` (..., n_axes).

    Raises :class:`ExtrapolationError` for queries outside the hull unless
    ``clamp`` is set.
    """
    grids = [np.asarray(g, dtype=float) for g in grids]
    points = np.asarray(points, dtype=float)
    n_axes = len(grids)
    if points.shape[-1] != n_axes:
        raise ValueError(f"points have {points.shape[-1]} coordinates, grid has {n_axes}")
    names = names or [str(i) for i in range(n_axes)]
    lead = points.shape[:-1]
    flat = points.reshape(-1, n_axes)
    idx, frac = [], []
    for a in range(n_axes):
        i, f = _locate(grids[a], flat[:, a], names[a], clamp)
        idx.append(i)
        frac.append(f)
    out = np.zeros(flat.shape[0])
    for corner in itertools.product((0, 1), repeat=n_axes):
        w = np.ones(flat.shape[0])
        sel = []
        for a, c in enumerate(corner):
            if grids[a].size == 1:
                if c:
                    w = w * 0.0
                sel.append(idx[a])
                continue
            w = w * (frac[a] if c else 1.0 - frac[a])
            sel.append(idx[a] + c)
        nz = w != 0.0
        if np.any(nz):
            out[nz] += w[nz] * values[tuple(s[nz] for s in sel)]
    return out.reshape(lead)


def uniform_axes(lo, dx, shape):
    """Node coordinates of a uniform grid as a list of 1-D arrays."""
    return [lo[a] + dx * np.arange(shape[a]) for a in range(len(shape))]
