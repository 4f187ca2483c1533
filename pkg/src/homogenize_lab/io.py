"""CSV files with a single JSON header line, plus table/field round trips.

Every artifact is plain text: line one is ``# {json}``, line two the column
names, then rows formatted with ``%.17g`` so floats round-trip exactly and the
bytes depend only on the numbers.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
from pathlib import Path

import numpy as np

from .cell import EffectiveLagrangianTable
from .errors import ConfigError
from .solve import GridSpec, StepControl, ValueField
from .xform import HamiltonianTable

FORMAT_VERSION = 1
FLOAT_FMT = "%.17g"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj


def dumps_header(header):
    return json.dumps(_jsonable(header), sort_keys=True, separators=(",", ":"))


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % float(v)
    return str(v)


def write_csv(path, header, columns, rows):
    """Write rows under a JSON header line.

    ``rows`` is a 2-D float array (fast path) or a list of mixed records.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = _io.StringIO()
    buf.write("# " + dumps_header(header) + "\n")
    buf.write(",".join(columns) + "\n")
    if isinstance(rows, np.ndarray):
        rows = np.atleast_2d(rows.astype(float))
        if rows.size and rows.shape[1] != len(columns):
            raise ValueError(f"{len(columns)} columns but rows have width {rows.shape[1]}")
        if rows.size:
            np.savetxt(buf, rows, fmt=FLOAT_FMT, delimiter=",")
    else:
        w = csv.writer(buf, lineterminator="\n")
        for r in rows:
            if len(r) != len(columns):
                raise ValueError(f"{len(columns)} columns but a row has width {len(r)}")
            w.writerow([_cell(v) for v in r])
    path.write_text(buf.getvalue())
    return path


def read_records(path):
    """Return ``(header, list of dict rows)`` with string values."""
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ConfigError(f"{path} has no JSON header line", "input")
        header = json.loads(first[2:])
        rows = list(csv.DictReader(fh))
    return header, rows


def read_csv(path):
    """Return ``(header, columns, rows)``."""
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ConfigError(f"{path} has no JSON header line", "input")
        header = json.loads(first[2:])
        columns = fh.readline().strip().split(",")
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    if rows.size == 0:
        rows = np.zeros((0, len(columns)))
    return header, columns, rows


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _lattice_rows(grids):
    mesh = np.meshgrid(*grids, indexing="ij")
    return np.stack([m.ravel() for m in mesh], -1)


def _check_kind(header, kind, path):
    if header.get("kind") != kind:
        raise ConfigError(f"{path} holds {header.get('kind')!r}, expected {kind!r}", "input")


# ----------------------------------------------------------------------------
# tables


def save_lagrangian_table(table, path):
    d = table.dimension
    pts = _lattice_rows(table.grids)
    rows = np.column_stack([pts, table.values.ravel(), table.errors.ravel(),
                            table.infeasible.ravel().astype(float)])
    header = {"kind": "effective_lagrangian", "version": FORMAT_VERSION,
              "t_axis": table.t_axis, "x_axes": table.x_axes, "u_axes": table.u_axes,
              "metadata": table.metadata}
    cols = table.names + ["value", "error", "infeasible"]
    assert len(cols) == 2 * d + 4
    return write_csv(path, header, cols, rows)


def load_lagrangian_table(path):
    header, _, rows = read_csv(path)
    _check_kind(header, "effective_lagrangian", path)
    t_axis = np.asarray(header["t_axis"], dtype=float)
    x_axes = [np.asarray(a, dtype=float) for a in header["x_axes"]]
    u_axes = [np.asarray(a, dtype=float) for a in header["u_axes"]]
    shape = (t_axis.size, *[a.size for a in x_axes], *[a.size for a in u_axes])
    k = len(shape)
    values = rows[:, k].reshape(shape)
    errors = rows[:, k + 1].reshape(shape)
    infeasible = rows[:, k + 2].reshape(shape) > 0.5
    return EffectiveLagrangianTable(t_axis, x_axes, u_axes, values, errors, infeasible,
                                    header.get("metadata", {}))


def save_hamiltonian_table(table, path):
    d = table.dimension
    pts = _lattice_rows(table.grids)
    rows = np.column_stack([pts, table.values.ravel(), table.argmax.reshape(-1, d)])
    header = {"kind": "effective_hamiltonian", "version": FORMAT_VERSION,
              "t_axis": table.t_axis, "x_axes": table.x_axes, "p_axes": table.p_axes,
              "control_radius": table.control_radius, "metadata": table.metadata}
    cols = table.names + ["value"] + [f"u{a + 1}" for a in range(d)]
    return write_csv(path, header, cols, rows)


def load_hamiltonian_table(path):
    header, _, rows = read_csv(path)
    _check_kind(header, "effective_hamiltonian", path)
    t_axis = np.asarray(header["t_axis"], dtype=float)
    x_axes = [np.asarray(a, dtype=float) for a in header["x_axes"]]
    p_axes = [np.asarray(a, dtype=float) for a in header["p_axes"]]
    d = len(p_axes)
    shape = (t_axis.size, *[a.size for a in x_axes], *[a.size for a in p_axes])
    k = len(shape)
    return HamiltonianTable(t_axis, x_axes, p_axes, rows[:, k].reshape(shape),
                            rows[:, k + 1:k + 1 + d].reshape(shape + (d,)),
                            float(header["control_radius"]), header.get("metadata", {}))


# ----------------------------------------------------------------------------
# value fields and controls


def save_value_field(field, path):
    g = field.grid
    d = g.dimension
    pts = _lattice_rows([g.times, *g.axes])
    n = g.n_steps
    policy = np.full((n + 1,) + g.shape + (d,), np.nan)
    if field.policy is not None:
        policy[:n] = np.asarray(field.policy).reshape((n,) + g.shape + (d,))
    rows = np.column_stack([pts, field.values.ravel(), policy.reshape(-1, d)])
    header = {"kind": "value_field", "version": FORMAT_VERSION, "field_kind": field.kind,
              "grid": g.to_dict(), "metadata": field.metadata}
    cols = ["t", *[f"x{a + 1}" for a in range(d)], "V", *[f"policy{a + 1}" for a in range(d)]]
    return write_csv(path, header, cols, rows)


def load_value_field(path):
    header, _, rows = read_csv(path)
    _check_kind(header, "value_field", path)
    gd = header["grid"]
    g = GridSpec(T=gd["T"], dt=gd["dt"], box_lo=tuple(gd["box_lo"]), box_hi=tuple(gd["box_hi"]),
                 dx=gd["dx"], control_radius=gd["control_radius"],
                 control_grid_n=gd["control_grid_n"], t_start=gd["t_start"])
    d = g.dimension
    n = g.n_steps
    values = rows[:, d + 1].reshape((n + 1,) + g.shape)
    policy = rows[:, d + 2:d + 2 + d].reshape((n + 1,) + g.shape + (d,))[:n]
    return ValueField(g, values, policy, header["field_kind"], header.get("metadata", {}))


def save_step_control(ctrl, path, header=None):
    u = np.asarray(ctrl.values, dtype=float)
    u = u.reshape(len(u), -1)
    rows = np.column_stack([np.asarray(ctrl.breakpoints[:-1], dtype=float), u])
    head = {"kind": "step_control", "version": FORMAT_VERSION,
            "T": float(ctrl.breakpoints[-1]), **(header or {})}
    cols = ["t_break", *[f"u{a + 1}" for a in range(u.shape[1])]]
    return write_csv(path, head, cols, rows)


def load_step_control(path):
    header, _, rows = read_csv(path)
    _check_kind(header, "step_control", path)
    br = np.append(rows[:, 0], float(header["T"]))
    return StepControl(br, rows[:, 1:])
