"""PNG figures for the experiment driver (Agg backend, byte-stable output)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 100


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no Software/date chunks so identical data gives identical bytes
    fig.savefig(path, dpi=DPI, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_environment(ys, vals, path, title="potential"):
    ys = np.asarray(ys)
    vals = np.asarray(vals)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if ys.ndim == 1 or ys.shape[-1] == 1:
        ax.plot(ys.reshape(-1), vals.reshape(-1), lw=1)
        ax.set_xlabel("y")
        ax.set_ylabel("V(y)")
    else:
        n = int(round(np.sqrt(len(vals))))
        im = ax.imshow(vals.reshape(n, n).T, origin="lower", aspect="equal",
                       extent=[ys[:, 0].min(), ys[:, 0].max(), ys[:, 1].min(), ys[:, 1].max()])
        fig.colorbar(im, ax=ax)
        ax.set_xlabel("y1")
        ax.set_ylabel("y2")
    ax.set_title(title)
    return _save(fig, path)


def plot_table(table, model, path):
    """Effective Lagrangian against u at the first (t, x) node, 1-D tables only."""
    fig, ax = plt.subplots(figsize=(6, 4))
    u = table.u_axes[0]
    idx = (0,) * (1 + table.dimension)
    vals = table.values[idx]
    err = table.errors[idx]
    if table.dimension == 1:
        ax.errorbar(u, vals, yerr=err, fmt="o-", ms=3, lw=1, label="effective table")
        ax.plot(u, model.L_star(u[:, None]), "--", lw=1, label="lower bound L*")
        ax.set_xlabel("u")
    else:
        mid = table.u_axes[1].size // 2
        ax.plot(u, vals[:, mid], "o-", ms=3, lw=1, label="effective table (u2 = mid)")
        ax.set_xlabel("u1")
    ax.set_ylabel("cost rate")
    ax.legend()
    return _save(fig, path)


def plot_values(fields, path, slice_index=0):
    """Overlay value slices (1-D grids) or show the first one as an image (2-D)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, f in fields.items():
        g = f.grid
        if g.dimension == 1:
            ax.plot(g.axes[0], f.values[slice_index], lw=1, label=label)
        else:
            ax.imshow(f.values[slice_index].T, origin="lower", aspect="auto",
                      extent=[g.box_lo[0], g.box_hi[0], g.box_lo[1], g.box_hi[1]])
            ax.set_title(label)
            break
    ax.set_xlabel("x")
    if len(fields) > 1:
        ax.legend(fontsize=8)
    return _save(fig, path)


def plot_gaps(eps, gaps, path):
    eps = np.asarray(eps, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(eps, gaps, "o-")
    ax.set_xlabel("eps")
    ax.set_ylabel("sup gap on compact set")
    ax.grid(True, which="both", lw=0.3)
    return _save(fig, path)


def plot_hamiltonian(htable, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    p = htable.p_axes[0]
    idx = (0,) * (1 + htable.dimension)
    vals = htable.values[idx]
    if htable.dimension > 1:
        vals = vals[:, htable.p_axes[1].size // 2]
    ax.plot(p, vals, lw=1)
    ax.set_xlabel("p")
    ax.set_ylabel("effective Hamiltonian")
    return _save(fig, path)
