"""Independent reference solutions used by the tests.

Everything here is written against the problem definitions directly (brute
force enumeration, quadrature, closed forms) and shares no code with the
solvers except the lattice/stage-cost conventions that define the discrete
problem being enumerated.
"""

import itertools
import math

import numpy as np
from scipy import integrate, optimize


# -- 1-D periodic effective Hamiltonian for H(p, y) = p^2/2 - V(y) --------------


def _V(y):
    return 1.0 - np.cos(2 * np.pi * y)


P0 = 4.0 / math.pi  # integral of sqrt(2 V) over one period


def _action(lam):
    val, _ = integrate.quad(lambda y: math.sqrt(2.0 * (lam + _V(y))), 0.0, 1.0, limit=200)
    return val


def effective_hamiltonian_1d(P):
    """Effective Hamiltonian of p^2/2 - (1 - cos 2 pi y); 0 on the flat piece |P| <= 4/pi."""
    P = abs(float(P))
    if P <= P0:
        return 0.0
    return optimize.brentq(lambda lam: _action(lam) - P, 0.0, P * P)


def effective_lagrangian_1d(v):
    """Legendre dual of the effective Hamiltonian: sup_P (P v - Hbar(P))."""
    v = abs(float(v))
    if v == 0.0:
        return 0.0
    res = optimize.minimize_scalar(lambda P: -(P * v - effective_hamiltonian_1d(P)),
                                   bounds=(0.0, 4.0 * v + 4.0), method="bounded",
                                   options={"xatol": 1e-10})
    return -res.fun


# -- Hopf-Lax for H = p^2/2 and psi = |x| --------------------------------------


def hopf_lax_abs(x, s):
    """min_y |y| + |y - x|^2 / (2 s), by direct minimization."""
    if s == 0:
        return abs(x)
    res = optimize.minimize_scalar(lambda y: abs(y) + (y - x) ** 2 / (2 * s),
                                   bounds=(-abs(x) - 1, abs(x) + 1), method="bounded",
                                   options={"xatol": 1e-12})
    return min(res.fun, abs(x) - s / 2 if abs(x) >= s else x * x / (2 * s) + 1.0)


# -- brute force enumeration ---------------------------------------------------


def enumerate_node_paths(n_nodes, moves, stage, terminal, penalty):
    """Brute-force value of a 1-D grid problem whose steps land on nodes.

    A path starts at node ``j_0`` and moves ``j_{i+1} = clip(j_i + moves[c_i])``;
    a clipped step is charged ``penalty``. The cost of a path is summed from
    the end, ``acc = terminal[j_n]`` then ``acc = (stage[i, j_i, c_i] + acc) + pen_i``,
    which is the floating-point order of a backward recursion, so the minimum
    over all ``len(moves) ** n_steps`` paths equals the recursion bit for bit.

    Args:
        stage: (n_steps, n_nodes, n_moves) stage costs.
        terminal: (n_nodes,) terminal costs.
    """
    stage = np.asarray(stage, dtype=float)
    n_steps = stage.shape[0]
    moves = np.asarray(moves, dtype=np.int64)
    seqs = np.array(list(itertools.product(range(len(moves)), repeat=n_steps)), dtype=np.int64)
    seqs = seqs.reshape(-1, n_steps)
    out = np.empty(n_nodes)
    for j0 in range(n_nodes):
        pos = np.empty((len(seqs), n_steps + 1), dtype=np.int64)
        clipped = np.zeros((len(seqs), n_steps), dtype=bool)
        pos[:, 0] = j0
        for i in range(n_steps):
            raw = pos[:, i] + moves[seqs[:, i]]
            clipped[:, i] = (raw < 0) | (raw > n_nodes - 1)
            pos[:, i + 1] = np.clip(raw, 0, n_nodes - 1)
        acc = np.asarray(terminal, dtype=float)[pos[:, n_steps]]
        for i in range(n_steps - 1, -1, -1):
            acc = (stage[i, pos[:, i], seqs[:, i]] + acc) + np.where(clipped[:, i], penalty, 0.0)
        out[j0] = np.min(acc)
    return out


def enumerate_lattice_paths(start, target, n_steps, ks, step_cost):
    """min over all sequences of lattice steps of the summed step costs.

    ``step_cost(n, pos, c)`` is vectorized: ``pos`` is (m, d) lattice indices
    and ``c`` (m,) step indices. Costs are accumulated from the start, the
    order of a forward recursion. Returns +inf if no sequence ends at ``target``.
    """
    ks = np.asarray(ks, dtype=np.int64).reshape(len(ks), -1)
    seqs = np.array(list(itertools.product(range(len(ks)), repeat=n_steps)), dtype=np.int64)
    seqs = seqs.reshape(-1, n_steps)
    pos = np.broadcast_to(np.asarray(start, dtype=np.int64), (len(seqs), ks.shape[1])).copy()
    total = np.zeros(len(seqs))
    for n in range(n_steps):
        total = total + step_cost(n, pos, seqs[:, n])
        pos = pos + ks[seqs[:, n]]
    hit = np.all(pos == np.asarray(target, dtype=np.int64), axis=1)
    return float(np.min(total[hit])) if hit.any() else math.inf
