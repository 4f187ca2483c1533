"""Command line driver.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure in a
stage, 4 missing upstream artifact.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

from .cell import CellProblemSpec, point_to_point_cost
from .config import load_config
from .errors import ConfigError, HomogenizationError
from .pipeline import STAGES, MissingArtifactError, Runner, StageError, table_path

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_MISSING = 0, 2, 3, 4
ENV_WORKERS = "HOMOGENIZE_LAB_WORKERS"

log = logging.getLogger("homogenize_lab")


def shipped_config(name):
    """Path of a config shipped with the package, e.g. ``trivial.toml``."""
    return Path(str(resources.files("homogenize_lab") / "configs" / name))


def _resolve_config(arg):
    p = Path(arg)
    if not p.exists() and not p.is_absolute() and (shipped_config(arg)).exists():
        return shipped_config(arg)
    return p


def _workers(args, cfg):
    if args.workers is not None:
        return args.workers
    env = os.environ.get(ENV_WORKERS)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"not an integer: {env!r}", ENV_WORKERS) from None
        if n < 1:
            raise ConfigError("must be >= 1", ENV_WORKERS)
        return n
    return cfg.workers


def _load(args):
    cfg = load_config(_resolve_config(args.config))
    if args.seed_override:
        try:
            seeds = [int(s) for s in args.seed_override.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"bad seed list {args.seed_override!r}", "--seed-override") from None
        if not seeds or any(s < 0 for s in seeds):
            raise ConfigError("need non-negative integers", "--seed-override")
        cfg.seeds = seeds
    out = Path(args.output) if args.output else cfg.output_dir
    return Runner(cfg, out, _workers(args, cfg))


def _common(p):
    p.add_argument("--config", required=True, help="TOML or JSON experiment file (or a shipped name)")
    p.add_argument("--output", help="output directory (overrides output_dir)")
    p.add_argument("--workers", type=int, help=f"worker threads (fallback: ${ENV_WORKERS}, then config)")
    p.add_argument("--seed-override", help="comma-separated seeds replacing the config list")


def build_parser():
    ap = argparse.ArgumentParser(prog="homogenize-lab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full pipeline (or selected stages)")
    _common(p)
    p.add_argument("--stage", action="append", choices=STAGES,
                   help="run only this stage (repeatable); inputs come from --output")

    p = sub.add_parser("gen-env", help="dump environment realizations as CSV + PNG")
    _common(p)
    p.add_argument("--n", type=int, help="samples per axis")

    p = sub.add_parser("cell", help="solve one cell problem and print it as JSON")
    _common(p)
    p.add_argument("--b", type=float, required=True, help="horizon")
    p.add_argument("--u", type=float, nargs="+", required=True, help="average control")
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--x", type=float, nargs="+")
    p.add_argument("--path", action="store_true", help="include the argmin path")

    p = sub.add_parser("table", help="build effective Lagrangian tables (one per seed)")
    _common(p)

    p = sub.add_parser("solve", help="value solves from an existing table")
    _common(p)
    p.add_argument("--homogenized", action="store_true",
                   help="only the homogenized value (on the eps grid, or the HJB grid without --eps)")
    p.add_argument("--eps", type=float, help="grid of this eps (dx = eps/4)")

    p = sub.add_parser("hjb", help="effective Hamiltonian table and Lax-Friedrichs solve")
    _common(p)

    p = sub.add_parser("report", help="assemble report.md and manifest.json from stage outputs")
    _common(p)
    return ap


def _cmd_cell(runner, args):
    cfg = runner.cfg
    model = cfg.build_model()
    d = model.dimension
    u = tuple(args.u)
    if len(u) != d:
        raise ConfigError(f"expected {d} components", "--u")
    x = tuple(args.x) if args.x else (0.0,) * d
    cell = dict(cfg.cell)
    spec = CellProblemSpec(u_tilde=u, horizon_b=args.b, t0=args.t, x0=x, **cell)
    res = point_to_point_cost(spec, model, model.env, tolerance=True)
    print(json.dumps(res.to_dict(with_path=args.path), sort_keys=True))


def _cmd_solve(runner, args):
    _ = runner._primary()  # exit 4 before any work when the table is missing
    if args.homogenized:
        if args.eps is not None:
            name = f"value_homog_eps{format(args.eps, '.6g')}.csv"
            runner.solve_homogenized_on(args.eps / 4.0, name)
        else:
            runner.solve_homogenized_on(runner.cfg.hjb_dx, "value_homog_hjbgrid.csv")
    else:
        runner.run(("solve",))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        runner = _load(args)
        cmd = args.command
        if cmd == "run":
            runner.run(tuple(args.stage) if args.stage else STAGES)
            print(f"artifacts in {runner.out}")
        elif cmd == "gen-env":
            for p in runner.gen_env(args.n):
                print(p)
        elif cmd == "cell":
            _cmd_cell(runner, args)
        elif cmd == "table":
            runner.run(("table",))
            for s in runner.cfg.seeds:
                print(table_path(runner.out, s))
        elif cmd == "solve":
            _cmd_solve(runner, args)
        elif cmd == "hjb":
            runner.run(("hjb",))
        elif cmd == "report":
            runner.run(("report",))
            print(runner.out / "report.md")
    except FileNotFoundError as exc:
        # config or a file it references; upstream artifacts raise MissingArtifactError
        print(f"configuration error: file not found: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except StageError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except HomogenizationError as exc:
        print(f"numerical error in stage '{args.command}': {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
