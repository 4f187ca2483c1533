"""Experiment stages: assumptions, effective tables, value solves, HJB check, report.

Each stage reads its inputs from ``output_dir`` and writes CSV files there, so
stages can be rerun one at a time. Numerical artifacts depend only on the
config and the seeds; wall-clock figures live in ``timings.json`` and the
human-readable ``report.md``.
"""

from __future__ import annotations

import itertools
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import plotting
from .cell import build_table
from .errors import ConfigError, HomogenizationError
from .env import write_field_csv
from .io import (load_lagrangian_table, read_csv, read_records, save_hamiltonian_table,
                 save_lagrangian_table, save_value_field, sha256_file, write_csv)
from .model import check_assumptions
from .solve import MacroCellCosts, solve_fine, solve_homogenized, solve_macro
from .xform import build_hamiltonian_table, solve_hjb

log = logging.getLogger(__name__)

STAGES = ("assumptions", "table", "solve", "hjb", "report")


class MissingArtifactError(HomogenizationError):
    """An upstream stage output is not on disk."""


class StageError(HomogenizationError):
    """A numerical failure inside a named stage."""

    def __init__(self, stage, exc):
        super().__init__(f"stage '{stage}' failed: {type(exc).__name__}: {exc}")
        self.stage = stage


def _tag(v):
    return format(float(v), ".6g")


def table_path(out, seed):
    return Path(out) / f"table_seed{seed}.csv"


def _require(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing upstream artifact {path}")
    return path


class Runner:
    """Runs the stages of one experiment into ``out``."""

    def __init__(self, cfg, out=None, workers=None):
        self.cfg = cfg
        self.out = Path(out if out is not None else cfg.output_dir)
        self.workers = int(workers or cfg.workers)
        self.timings = {}

    def _timed(self, name, fn):
        t0 = time.perf_counter()
        try:
            result = fn()
        except (ConfigError, MissingArtifactError):
            raise
        except HomogenizationError as exc:
            raise StageError(name, exc) from exc
        except (ValueError, FloatingPointError, ArithmeticError) as exc:
            raise StageError(name, exc) from exc
        self.timings[name] = time.perf_counter() - t0
        log.info("stage %s done in %.2f s", name, self.timings[name])
        return result

    def run(self, stages=STAGES):
        self.out.mkdir(parents=True, exist_ok=True)
        for name in STAGES:
            if name in stages:
                self._timed(name, getattr(self, f"stage_{name}"))
        self._write_timings()
        if "report" in stages:
            self.write_manifest()
        return self.out

    # -- stages ---------------------------------------------------------------

    def stage_assumptions(self):
        model = self.cfg.build_model()
        rep = check_assumptions(model)
        rows = [[r.index, r.name, r.passed, r.worst_violation, r.location] for r in rep.results]
        return write_csv(self.out / "assumptions.csv", {"kind": "assumptions", "model_hash": model.hash()},
                         ["assumption", "name", "passed", "worst_violation", "location"], rows)

    def gen_env(self, n=None):
        cfg = self.cfg
        paths = []
        for seed in cfg.seeds:
            model = cfg.build_model(seed)
            d = model.dimension
            npts = n or (2001 if d == 1 else 201)
            lo, hi = np.zeros(d), np.full(d, 4.0 * cfg.environment.period)
            p = self.out / f"env_seed{seed}.csv"
            p.parent.mkdir(parents=True, exist_ok=True)
            write_field_csv(p, model.env, lo, hi, npts)
            _, _, rows = read_csv(p)
            plotting.plot_environment(rows[:, :d], rows[:, d], self.out / f"env_seed{seed}.png",
                                      title=f"{cfg.environment.kind} seed {seed}")
            paths.append(p)
        return paths

    def stage_table(self):
        cfg = self.cfg
        tg = cfg.table
        paths = []
        for seed in cfg.seeds:
            model = cfg.build_model(seed)
            tab = build_table(model, model.env, tg.t_nodes, tg.x_nodes, tg.u_nodes, cfg.b_schedule,
                              cell=cfg.cell, workers=self.workers)
            p = save_lagrangian_table(tab, table_path(self.out, seed))
            paths.append(p)
        first = load_lagrangian_table(paths[0])
        plotting.plot_table(first, cfg.build_model(), self.out / "table.png")
        return paths

    def _primary(self):
        model = self.cfg.build_model()
        tab = load_lagrangian_table(_require(table_path(self.out, self.cfg.seeds[0])))
        return model, tab

    def solve_homogenized_on(self, dx, name):
        model, tab = self._primary()
        grid = self.cfg.grid(dx, model)
        vh = solve_homogenized(tab, grid, model)
        save_value_field(vh, self.out / name)
        return vh

    def stage_solve(self):
        cfg = self.cfg
        model, tab = self._primary()
        rows, fields = [], {}
        for eps in cfg.eps:
            grid = cfg.grid(eps / 4.0, model)
            vf = solve_fine(model, model.env, eps, grid)
            vh = solve_homogenized(tab, grid, model)
            save_value_field(vf, self.out / f"value_fine_eps{_tag(eps)}.csv")
            save_value_field(vh, self.out / f"value_homog_eps{_tag(eps)}.csv")
            mask = grid.compact_mask()
            rows.append([eps, grid.dx, grid.dt, vf.sup_gap(vh, mask),
                         float(np.max(np.abs(vf.values[0] - vh.values[0])[mask]))])
            fields[f"fine eps={_tag(eps)}"] = vf
            fields.setdefault("homogenized", vh)
        write_csv(self.out / "gaps.csv", {"kind": "convergence", "compact_fraction": 0.5,
                                          "model_hash": model.hash()},
                  ["eps", "dx", "dt", "sup_gap", "sup_gap_t0"], np.array(rows))
        plotting.plot_values(fields, self.out / "values.png")
        plotting.plot_gaps([r[0] for r in rows], [r[3] for r in rows], self.out / "gaps.png")
        if cfg.tau:
            self._tau_sweep(model, tab)
        return rows

    def _tau_sweep(self, model, tab):
        cfg = self.cfg
        eps = cfg.eps[-1]
        fK = model.dynamics.f_star(cfg.control_radius)
        rows = []
        for tau in cfg.tau:
            grid = cfg.grid(tau * fK, model)
            if abs(grid.dt - tau) > 1e-9:
                raise ConfigError(f"tau = {tau} does not divide T", "sweep.tau")
            costs = MacroCellCosts(model, model.env, eps, tau, cfg.cell)
            vm = solve_macro(costs, grid, model)
            vh = solve_homogenized(tab, grid, model)
            save_value_field(vm, self.out / f"value_macro_tau{_tag(tau)}.csv")
            rows.append([tau, eps, grid.dx, vm.sup_gap(vh, grid.compact_mask()), costs.n_solved])
        write_csv(self.out / "tau_sweep.csv", {"kind": "tau_sweep", "eps": eps},
                  ["tau", "eps", "dx", "sup_gap", "cell_solves"], rows)

    def stage_hjb(self):
        cfg = self.cfg
        model, tab = self._primary()
        tg = cfg.table
        ht = build_hamiltonian_table(tab, model, tg.t_nodes, tg.x_nodes, tg.p_nodes, workers=self.workers)
        save_hamiltonian_table(ht, self.out / "hamiltonian.csv")
        alpha = ht.slope_bounds()
        speed = max(model.dynamics.f_star(cfg.control_radius), float(np.sum(alpha)) / 0.99)
        grid = cfg.grid(cfg.hjb_dx, model, max_speed=speed)
        vj = solve_hjb(ht, grid, model.lagrangian.psi, alpha=alpha)
        vh = solve_homogenized(tab, grid, model)
        save_value_field(vj, self.out / "value_hjb.csv")
        save_value_field(vh, self.out / "value_homog_hjbgrid.csv")
        gap = vj.sup_gap(vh, grid.compact_mask())
        write_csv(self.out / "hjb_gap.csv", {"kind": "hjb_consistency", "alpha": alpha},
                  ["dx", "dt", "sup_gap"], np.array([[grid.dx, grid.dt, gap]]))
        plotting.plot_hamiltonian(ht, self.out / "hamiltonian.png")
        return gap

    def seed_discrepancy(self):
        """Relative per-node differences between the tables of every seed pair."""
        cfg = self.cfg
        tabs = {s: load_lagrangian_table(_require(table_path(self.out, s))) for s in cfg.seeds}
        rows = []
        for s1, s2 in itertools.combinations(cfg.seeds, 2):
            a, b = tabs[s1], tabs[s2]
            pts = np.stack(np.meshgrid(*a.grids, indexing="ij"), -1).reshape(-1, len(a.grids))
            va, vb = a.values.ravel(), b.values.ravel()
            rel = np.abs(va - vb) / np.maximum(np.abs(va), 1.0)
            for p, x, y, r in zip(pts, va, vb, rel):
                rows.append([s1, s2, *p, x, y, r])
        names = tabs[cfg.seeds[0]].names
        return ["seed_a", "seed_b", *names, "value_a", "value_b", "rel_diff"], rows

    def stage_report(self):
        cfg = self.cfg
        lines = [f"# Experiment report: {cfg.name}", ""]
        _, assum = read_records(_require(self.out / "assumptions.csv"))
        lines += ["## Assumption checks", "", "| # | check | passed | worst violation | location |",
                  "|---|---|---|---|---|"]
        for r in assum:
            ok = "yes" if r["passed"] == "1" else "NO"
            lines.append(f"| {r['assumption']} | {r['name']} | {ok} | {float(r['worst_violation']):.3g} "
                         f"| {r['location']} |")
        _, _, gaps = read_csv(_require(self.out / "gaps.csv"))
        lines += ["", "## Convergence of the scaled value to the homogenized value", "",
                  "Sup-norm over the central half of the box, all time slices.", "",
                  "| eps | dx | dt | sup gap | gap at t=0 |", "|---|---|---|---|---|"]
        for e, dx, dt, g, g0 in gaps:
            lines.append(f"| {_tag(e)} | {dx:.5g} | {dt:.5g} | {g:.4f} | {g0:.4f} |")
        hjb = self.out / "hjb_gap.csv"
        if hjb.exists():
            _, _, h = read_csv(hjb)
            lines += ["", "## Hamilton-Jacobi consistency", "",
                      f"Lax-Friedrichs solution on the effective Hamiltonian vs the semi-Lagrangian "
                      f"homogenized value (dx = {h[0, 0]:.5g}, dt = {h[0, 1]:.5g}): sup gap "
                      f"{h[0, 2]:.4f}."]
        tau = self.out / "tau_sweep.csv"
        if tau.exists():
            _, recs = read_records(tau)
            lines += ["", "## Cell-interval sweep", "", "| tau | eps | sup gap to homogenized | cell solves |",
                      "|---|---|---|---|"]
            for r in recs:
                lines.append(f"| {r['tau']} | {r['eps']} | {float(r['sup_gap']):.4f} | {r['cell_solves']} |")
        if len(cfg.seeds) > 1:
            cols, rows = self.seed_discrepancy()
            write_csv(self.out / "seed_discrepancy.csv", {"kind": "seed_discrepancy"}, cols, rows)
            lines += ["", "## Seed discrepancy of the effective table", ""]
            for r in rows:
                node = ", ".join(f"{n}={_tag(v)}" for n, v in zip(cols[2:-3], r[2:-3]))
                lines.append(f"- seeds {r[0]} vs {r[1]} at ({node}): {r[-3]:.5g} vs {r[-2]:.5g}, "
                             f"relative diff {r[-1]:.3%}")
        timings = self._read_timings()
        if timings:
            lines += ["", "## Wall clock", "", "| stage | seconds |", "|---|---|"]
            lines += [f"| {k} | {v:.2f} |" for k, v in timings.items()]
        lines.append("")
        p = self.out / "report.md"
        p.write_text("\n".join(lines))
        return p

    # -- bookkeeping ----------------------------------------------------------

    def _read_timings(self):
        p = self.out / "timings.json"
        old = json.loads(p.read_text()) if p.exists() else {}
        old.update(self.timings)
        return old

    def _write_timings(self):
        p = self.out / "timings.json"
        p.write_text(json.dumps(self._read_timings(), indent=2, sort_keys=True) + "\n")

    def write_manifest(self):
        import matplotlib
        import scipy
        inputs = {}
        if self.cfg.source is not None:
            inputs[str(self.cfg.source)] = sha256_file(self.cfg.source)
        outputs = {}
        for p in sorted(self.out.iterdir()):
            if p.is_file() and p.name != "manifest.json":
                outputs[p.name] = {"sha256": sha256_file(p), "bytes": p.stat().st_size}
        manifest = {"package": "homogenize_lab", "version": __version__, "config": self.cfg.to_dict(),
                    "inputs": inputs, "seeds": self.cfg.seeds, "outputs": outputs,
                    "versions": {"python": platform.python_version(), "numpy": np.__version__,
                                 "scipy": scipy.__version__, "matplotlib": matplotlib.__version__},
                    "argv": sys.argv[1:]}
        p = self.out / "manifest.json"
        p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return p
