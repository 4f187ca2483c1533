"""Experiment configuration: TOML (or JSON) files mapped onto model objects.

Errors are raised as :class:`ConfigError` whose ``field`` is the dotted path of
the offending key, e.g. ``sweep.eps[2]``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .cell import DEFAULT_SCHEDULE
from .env import EnvironmentSpec, create_environment
from .errors import ConfigError
from .model import (AbsTerminal, ClippedTimeSpaceMacro, ConstantCost, DynamicsSpec,
                    LagrangianSpec, ModelSpec, PowerCost, SmoothAbsTerminal, SmoothMacro,
                    TimeLinearMacro, ZeroMacro, ZeroTerminal)
from .solve import GridSpec

RUNNING = {"power": PowerCost, "constant": ConstantCost}
MACROS = {"zero": ZeroMacro, "time_linear": TimeLinearMacro,
          "clipped_time_space": ClippedTimeSpaceMacro, "smooth": SmoothMacro}
TERMINALS = {"zero": ZeroTerminal, "abs": AbsTerminal, "smooth_abs": SmoothAbsTerminal}
CELL_KEYS = ("micro_dt", "micro_lattice", "control_radius", "control_grid_n", "tube_radius",
             "endpoint_mode", "penalty_weight", "auto_expand")
TOP_KEYS = ("name", "model", "environment", "grids", "cell", "sweep", "seeds", "output_dir", "workers")


def _expect_keys(block, allowed, where):
    if not isinstance(block, dict):
        raise ConfigError("expected a table", where)
    extra = sorted(set(block) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) {extra}", where)


def _num(block, key, where, default=None, positive=False):
    v = block.get(key, default)
    if v is None:
        raise ConfigError("missing", f"{where}.{key}")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", f"{where}.{key}")
    if positive and not v > 0:
        raise ConfigError(f"must be > 0, got {v}", f"{where}.{key}")
    return float(v)


def _component(block, registry, where):
    """Build a built-in component from ``{kind = ..., <params>}``."""
    if isinstance(block, str):
        block = {"kind": block}
    if not isinstance(block, dict) or "kind" not in block:
        raise ConfigError("expected a table with a 'kind' key", where)
    kind = block["kind"]
    if kind not in registry:
        raise ConfigError(f"unknown built-in {kind!r}; choose from {sorted(registry)}", f"{where}.kind")
    params = {k: v for k, v in block.items() if k != "kind"}
    if "cap" in params and params["cap"] is None:
        params.pop("cap")
    try:
        return registry[kind](**params)
    except TypeError as exc:
        raise ConfigError(str(exc), where) from None


def _axis(spec, where):
    """Axis from an explicit list or ``{lo, hi, n}``."""
    if isinstance(spec, dict):
        _expect_keys(spec, ("lo", "hi", "n"), where)
        n = spec.get("n")
        if not isinstance(n, int) or n < 1:
            raise ConfigError("n must be a positive integer", f"{where}.n")
        ax = np.linspace(_num(spec, "lo", where), _num(spec, "hi", where), n)
    else:
        ax = np.asarray(spec, dtype=float).ravel()
    if ax.size == 0 or np.any(np.diff(ax) <= 0):
        raise ConfigError("axis must be non-empty and strictly increasing", where)
    return ax


@dataclass
class TableGrid:
    t_nodes: np.ndarray
    x_nodes: list
    u_nodes: list
    p_nodes: list


@dataclass
class ExperimentConfig:
    """Validated experiment description.

    Attributes:
        model: raw model block; :meth:`build_model` turns it into a :class:`ModelSpec`.
        grids: box, control grid and time-step ratio of the value solvers.
        table: lattices of the effective tables.
        cell: :class:`CellProblemSpec` overrides used for every table node.
        eps: strictly decreasing scale ladder.
        tau: optional cell-interval ladder for the frozen-vs-moving diagnostic.
    """

    name: str
    model: dict
    environment: EnvironmentSpec
    box_lo: tuple
    box_hi: tuple
    control_radius: float
    control_grid_n: int
    dt_ratio: float | None
    hjb_dx: float
    table: TableGrid
    cell: dict
    eps: list
    tau: list
    b_schedule: tuple
    seeds: list
    output_dir: Path
    workers: int = 1
    source: Path | None = None
    raw: dict = field(default_factory=dict, repr=False)

    # -- builders -----------------------------------------------------------

    def build_model(self, seed=None):
        """Model with the environment instantiated for ``seed`` (default: first seed)."""
        seed = self.seeds[0] if seed is None else seed
        m = self.model
        dyn = m.get("dynamics", {"kind": "calculus_of_variations"})
        if isinstance(dyn, str):
            dyn = {"kind": dyn}
        dyn = dict(dyn)
        if dyn.get("kind") == "user_table":
            path = dyn.pop("csv", None)
            if path is None:
                raise ConfigError("user_table needs a csv path", "model.dynamics.csv")
            path = Path(path)
            if not path.is_absolute() and self.source is not None:
                path = self.source.parent / path
            dyn.pop("kind")
            dynamics = DynamicsSpec.from_csv(path, **_rename(dyn))
        else:
            try:
                dynamics = DynamicsSpec(**_rename(dyn))
            except TypeError as exc:
                raise ConfigError(str(exc), "model.dynamics") from None
        lag = m.get("lagrangian", {})
        env = create_environment(self.environment, int(seed))
        lagrangian = LagrangianSpec(
            running=_component(lag.get("running", {"kind": "power", "beta": 2.0}), RUNNING,
                               "model.lagrangian.running"),
            macro=_component(lag.get("macro", {"kind": "zero"}), MACROS, "model.lagrangian.macro"),
            env=env,
            psi=_component(lag.get("psi", {"kind": "zero"}), TERMINALS, "model.lagrangian.psi"),
            lam=float(lag.get("lambda", 1.0)))
        return ModelSpec(dynamics, lagrangian, float(m.get("T", 1.0)))

    def grid(self, dx, model, max_speed=None):
        """Value-solver grid at spacing ``dx``.

        ``dt`` is the largest step not exceeding ``dt_ratio * dx`` (default
        ``dx / max_speed``, with ``max_speed = f*(K)``) that divides ``T``.
        """
        T = float(self.model.get("T", 1.0))
        if self.dt_ratio is not None:
            dt_max = self.dt_ratio * dx
        else:
            speed = model.dynamics.f_star(self.control_radius) if max_speed is None else max_speed
            dt_max = dx / speed
        n = max(1, int(np.ceil(T / dt_max - 1e-9)))
        return GridSpec(T=T, dt=T / n, box_lo=self.box_lo, box_hi=self.box_hi, dx=dx,
                        control_radius=self.control_radius, control_grid_n=self.control_grid_n)

    def to_dict(self):
        return json.loads(json.dumps(self.raw, default=str))


def _rename(d):
    out = {}
    for k, v in d.items():
        if k in ("eta", "lip_H", "M_tilde"):
            k = k + "_decl"
        out[k] = v
    return out


def load_config(path):
    """Parse a ``.toml`` or ``.json`` experiment file and validate it."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}: {exc.msg}", "file") from None
    else:
        try:
            raw = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(str(exc), "file") from None
    try:
        return parse_config(raw, source=path)
    except ConfigError as exc:
        line = _line_of(text, exc.field)
        if line is None:
            raise
        raise ConfigError(f"{exc.message} (line {line})", exc.field) from None


def _line_of(text, field):
    """Best-effort line number of the key named by a dotted ``field`` path."""
    if not field:
        return None
    parts = [re.sub(r"\[\d+\]$", "", p) for p in field.split(".")]
    lines = text.splitlines()
    start = 0
    for i, ln in enumerate(lines):
        head = ln.strip()
        if head.startswith("[") and head.strip("[]").strip() == ".".join(parts[:-1]):
            start = i
            break
    pat = re.compile(r'^\s*"?' + re.escape(parts[-1]) + r'"?\s*[=:]')
    for i in range(start, len(lines)):
        if pat.search(lines[i]):
            return i + 1
    return None


def parse_config(raw, source=None):
    """Validate a raw config mapping into an :class:`ExperimentConfig`."""
    _expect_keys(raw, TOP_KEYS, "config")
    model = raw.get("model", {})
    _expect_keys(model, ("dynamics", "lagrangian", "T"), "model")
    _num(model, "T", "model", default=1.0, positive=True)
    lag = model.get("lagrangian", {})
    _expect_keys(lag, ("running", "macro", "psi", "lambda"), "model.lagrangian")

    env_block = raw.get("environment", {"kind": "periodic", "amplitude_range": [0.0, 0.0]})
    try:
        environment = EnvironmentSpec.from_dict(env_block)
    except ConfigError as exc:
        if not exc.field.startswith("environment"):
            raise ConfigError(exc.message, f"environment.{exc.field}") from None
        raise

    grids = raw.get("grids", {})
    _expect_keys(grids, ("box_lo", "box_hi", "control_radius", "control_grid_n", "dt_ratio",
                         "hjb_dx", "table"), "grids")
    box_lo = tuple(float(v) for v in np.atleast_1d(grids.get("box_lo", [-1.5])))
    box_hi = tuple(float(v) for v in np.atleast_1d(grids.get("box_hi", [1.5])))
    if len(box_lo) != environment.dimension or len(box_hi) != environment.dimension:
        raise ConfigError("box dimension must match environment.dimension", "grids.box_lo")
    K = _num(grids, "control_radius", "grids", default=3.0, positive=True)
    n_c = grids.get("control_grid_n", 31)
    if not isinstance(n_c, int) or n_c < 2:
        raise ConfigError("must be an integer >= 2", "grids.control_grid_n")
    ratio = grids.get("dt_ratio")
    if ratio is not None:
        ratio = _num(grids, "dt_ratio", "grids", positive=True)
    hjb_dx = _num(grids, "hjb_dx", "grids", default=1.0 / 128, positive=True)

    tb = grids.get("table", {})
    _expect_keys(tb, ("t_nodes", "x_nodes", "u_nodes", "p_nodes"), "grids.table")
    d = environment.dimension
    T = float(model.get("T", 1.0))
    t_nodes = _axis(tb.get("t_nodes", [0.0, T]), "grids.table.t_nodes")
    x_default = [[lo, hi] for lo, hi in zip(box_lo, box_hi)]
    x_nodes = _per_axis(tb.get("x_nodes", x_default), d, "grids.table.x_nodes")
    u_nodes = _per_axis(tb.get("u_nodes", {"lo": -K, "hi": K, "n": 25}), d, "grids.table.u_nodes")
    p_nodes = _per_axis(tb.get("p_nodes", {"lo": -2.8, "hi": 2.8, "n": 113}), d, "grids.table.p_nodes")

    cell = dict(raw.get("cell", {}))
    _expect_keys(cell, CELL_KEYS, "cell")
    for k in ("micro_dt", "micro_lattice", "control_radius", "tube_radius"):
        if k in cell:
            _num(cell, k, "cell", positive=True)

    sweep = raw.get("sweep", {})
    _expect_keys(sweep, ("eps", "tau", "b_schedule"), "sweep")
    eps = _float_list(sweep.get("eps", [0.25, 0.125, 0.0625]), "sweep.eps")
    for i, e in enumerate(eps):
        if not e > 0:
            raise ConfigError(f"must be > 0, got {e}", f"sweep.eps[{i}]")
    for i in range(1, len(eps)):
        if not eps[i] < eps[i - 1]:
            raise ConfigError("list must be strictly decreasing", f"sweep.eps[{i}]")
    tau = _float_list(sweep.get("tau", []), "sweep.tau")
    for i, t in enumerate(tau):
        if not t > 0:
            raise ConfigError(f"must be > 0, got {t}", f"sweep.tau[{i}]")
    b_schedule = tuple(_float_list(sweep.get("b_schedule", list(DEFAULT_SCHEDULE)), "sweep.b_schedule"))
    if len(b_schedule) < 4 or any(b <= 0 for b in b_schedule) or np.any(np.diff(b_schedule) <= 0):
        raise ConfigError("need >= 4 positive increasing horizons", "sweep.b_schedule")

    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("must be a non-empty list", "seeds")
    for i, s in enumerate(seeds):
        if isinstance(s, bool) or not isinstance(s, int) or s < 0:
            raise ConfigError(f"expected a non-negative integer, got {s!r}", f"seeds[{i}]")
    workers = raw.get("workers", 1)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise ConfigError("must be a positive integer", "workers")
    out = raw.get("output_dir", "out")
    name = str(raw.get("name", Path(source).stem if source else "experiment"))

    cfg = ExperimentConfig(name=name, model=model, environment=environment, box_lo=box_lo,
                           box_hi=box_hi, control_radius=K, control_grid_n=n_c, dt_ratio=ratio,
                           hjb_dx=hjb_dx, table=TableGrid(t_nodes, x_nodes, u_nodes, p_nodes),
                           cell=cell, eps=eps, tau=tau, b_schedule=b_schedule, seeds=list(seeds),
                           output_dir=Path(out), workers=workers,
                           source=None if source is None else Path(source), raw=raw)
    # build once so model-level contracts surface as config errors
    cfg.build_model()
    return cfg


def _float_list(v, where):
    if not isinstance(v, list):
        raise ConfigError("expected a list", where)
    out = []
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(f"expected a number, got {x!r}", f"{where}[{i}]")
        out.append(float(x))
    return out


def _per_axis(spec, d, where):
    """One axis per dimension; a flat list or ``{lo, hi, n}`` is reused for every axis."""
    if isinstance(spec, dict):
        return [_axis(spec, where)] * d
    if spec and all(isinstance(s, (list, dict)) for s in spec):
        if len(spec) != d:
            raise ConfigError(f"expected {d} axes", where)
        return [_axis(s, f"{where}[{a}]") for a, s in enumerate(spec)]
    return [_axis(spec, where)] * d
