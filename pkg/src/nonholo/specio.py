"""JSON model specifications.

A spec either names a built-in model::

    {"schema_version": 1, "model": "snakeboard", "parameters": {"m": 2.0}}

or writes a system out in adapted coordinates::

    {"schema_version": 1,
     "name": "rolling-disk",
     "coordinates": {"shape": ["th"], "h_fiber": ["ph"], "gw_fiber": ["x", "y"]},
     "ranges": {"th": "periodic"},
     "parameters": {"m": 1.0, "R": 1.0},
     "metric": {"x,x": "m", "y,y": "m", "th,th": 0.5, "ph,ph": 0.25},
     "connection": [[0, ["*", -1, "R", ["cos", "th"]]], ...],
     "potential": 0,
     "initial": {"r": [0.1, 0.0], "rdot": [0.2, 1.0]}}

``metric`` is an n×n nested list or a map "a,b" -> expression filled in
symmetrically (missing entries are zero).  Instead of ``connection`` (k×m,
rows in gw_fiber order) one may give ``constraints``: the k×n coefficients of
the raw constraint one-forms.

Expressions are numbers, names (coordinates or parameters) or lists
``[op, arg, ...]`` with op one of + * - / ^ sin cos tan cot sqrt exp log.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from . import autodiff as ad
from .system import PERIODIC, AdaptedChart, MechanicalSystem, connection_from_constraints
from .zoo import MODELS, ModelBundle, get_model

SCHEMA_VERSION = 1


class SpecError(ValueError):
    """Malformed or unresolvable model spec."""


def _nary_add(args):
    out = args[0]
    for a in args[1:]:
        out = out + a
    return out


def _nary_mul(args):
    out = args[0]
    for a in args[1:]:
        out = out * a
    return out


def _minus(args):
    if len(args) == 1:
        return -args[0]
    if len(args) == 2:
        return args[0] - args[1]
    raise SpecError("'-' takes one or two arguments")


def _power(args):
    if len(args) != 2:
        raise SpecError("'^' takes two arguments")
    base, k = args
    if isinstance(k, ad.ADScalar):
        return ad.exp(ad.log(base) * k)
    if isinstance(base, ad.ADScalar):
        return base ** float(k)
    return float(base) ** float(k)


def _unary_op(f):
    def op(args):
        if len(args) != 1:
            raise SpecError("trigonometric and root operators take one argument")
        return f(args[0])
    return op


OPERATORS = {
    "+": _nary_add,
    "*": _nary_mul,
    "-": _minus,
    "/": lambda a: a[0] / a[1] if len(a) == 2 else _bad_arity("/"),
    "^": _power,
    "sin": _unary_op(ad.sin),
    "cos": _unary_op(ad.cos),
    "tan": _unary_op(ad.tan),
    "cot": _unary_op(lambda x: ad.cos(x) / ad.sin(x)),
    "sqrt": _unary_op(ad.sqrt),
    "exp": _unary_op(ad.exp),
    "log": _unary_op(ad.log),
}


def _bad_arity(op):
    raise SpecError(f"'{op}' takes two arguments")


def check_expression(expr, names: set, where: str = "expression"):
    """Reject unknown names and operators before anything is evaluated."""
    if isinstance(expr, bool):
        raise SpecError(f"{where}: booleans are not expressions")
    if isinstance(expr, (int, float)):
        if not math.isfinite(expr):
            raise SpecError(f"{where}: non-finite constant")
        return
    if isinstance(expr, str):
        if expr not in names:
            raise SpecError(f"{where}: unknown name {expr!r}")
        return
    if isinstance(expr, list) and expr and isinstance(expr[0], str):
        if expr[0] not in OPERATORS:
            raise SpecError(f"{where}: unknown operator {expr[0]!r}")
        if len(expr) < 2:
            raise SpecError(f"{where}: operator {expr[0]!r} without arguments")
        for a in expr[1:]:
            check_expression(a, names, where)
        return
    raise SpecError(f"{where}: cannot read {expr!r}")


def evaluate(expr, env: dict):
    """Evaluate an expression tree; names resolve through ``env``."""
    if isinstance(expr, (int, float)):
        return float(expr)
    if isinstance(expr, str):
        return env[expr]
    return OPERATORS[expr[0]]([evaluate(a, env) for a in expr[1:]])


def _as_matrix(rows, q):
    out = ad.stack(rows)
    if isinstance(q, ad.ADScalar) and not isinstance(out, ad.ADScalar):
        out = ad.constant(out, q.n, q.order)
    return out


def _names(block, label) -> tuple:
    if block is None:
        return ()
    if not isinstance(block, list) or not all(isinstance(b, str) for b in block):
        raise SpecError(f"coordinates.{label} must be a list of names")
    return tuple(block)


def _grid(value, rows: int, cols: int, label: str) -> list:
    if not isinstance(value, list) or len(value) != rows or any(
            not isinstance(r, list) or len(r) != cols for r in value):
        raise SpecError(f"{label} must be a {rows}x{cols} nested list")
    return value


def _metric_grid(value, names: tuple) -> list:
    n = len(names)
    if isinstance(value, list):
        return _grid(value, n, n, "metric")
    if not isinstance(value, dict):
        raise SpecError("metric must be a nested list or a map 'a,b' -> expression")
    grid = [[0.0] * n for _ in range(n)]
    index = {name: i for i, name in enumerate(names)}
    for key, expr in value.items():
        parts = [p.strip() for p in str(key).split(",")]
        if len(parts) != 2 or any(p not in index for p in parts):
            raise SpecError(f"metric key {key!r} is not a pair of coordinate names")
        i, j = index[parts[0]], index[parts[1]]
        grid[i][j] = expr
        grid[j][i] = expr
    return grid


def _ranges(value, names: tuple) -> dict:
    out = {}
    for name, rg in (value or {}).items():
        if name not in names:
            raise SpecError(f"range given for unknown coordinate {name!r}")
        if rg == PERIODIC:
            out[name] = PERIODIC
        elif isinstance(rg, list) and len(rg) == 2 and all(isinstance(v, (int, float)) for v in rg) \
                and rg[0] < rg[1]:
            out[name] = (float(rg[0]), float(rg[1]))
        else:
            raise SpecError(f"range for {name!r} must be 'periodic' or [lo, hi] with lo < hi")
    return out


def _parameters(value) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise SpecError("parameters must be a map name -> number")
    for k, v in value.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise SpecError(f"parameter {k!r} must be a finite number")
    return {k: float(v) for k, v in value.items()}


def build_system(spec: dict) -> ModelBundle:
    """Bundle for an explicit (non-zoo) spec; no closed-form oracles attached."""
    coords = spec.get("coordinates")
    if not isinstance(coords, dict):
        raise SpecError("missing 'coordinates' block")
    shape = _names(coords.get("shape"), "shape")
    hf = _names(coords.get("h_fiber"), "h_fiber")
    gw = _names(coords.get("gw_fiber"), "gw_fiber")
    names = shape + hf + gw
    if len(set(names)) != len(names) or not names:
        raise SpecError("coordinate names must be nonempty and distinct")
    params = _parameters(spec.get("parameters"))
    clash = set(params) & set(names)
    if clash:
        raise SpecError(f"names used both as coordinates and parameters: {sorted(clash)}")
    known = set(names) | set(params)
    try:
        chart = AdaptedChart(shape, hf, gw, _ranges(spec.get("ranges"), names))
    except ValueError as exc:
        raise SpecError(str(exc)) from exc
    n, m, k = chart.n, chart.m, chart.n_gw

    metric_exprs = _metric_grid(spec.get("metric"), names)
    if "connection" in spec and "constraints" in spec:
        raise SpecError("give either 'connection' or 'constraints', not both")
    if "constraints" in spec:
        con_exprs = _grid(spec["constraints"], k, n, "constraints")
    else:
        con_exprs = _grid(spec.get("connection", [[0] * m for _ in range(k)]), k, m, "connection")
    pot_expr = spec.get("potential", None)
    for i, row in enumerate(metric_exprs):
        for j, e in enumerate(row):
            check_expression(e, known, f"metric[{names[i]},{names[j]}]")
    for row in con_exprs:
        for e in row:
            check_expression(e, known, "connection")
    if pot_expr is not None:
        check_expression(pot_expr, known, "potential")

    def env(q):
        out = dict(params)
        for i, name in enumerate(names):
            out[name] = q[i]
        return out

    def metric(q):
        e = env(q)
        return _as_matrix([[evaluate(x, e) for x in row] for row in metric_exprs], q)

    def table(q):
        e = env(q)
        return _as_matrix([[evaluate(x, e) for x in row] for row in con_exprs], q)

    connection = connection_from_constraints(chart, table) if "constraints" in spec else table
    potential = None
    if pot_expr is not None:
        def potential(q):
            v = evaluate(pot_expr, env(q))
            return v + 0.0 * q[0]

    system = MechanicalSystem(chart, metric, connection, potential=potential,
                              definite=bool(spec.get("definite", True)),
                              name=str(spec.get("name", "custom")), parameters=params)
    init = spec.get("initial") or {}
    r0 = np.asarray(init.get("r", np.zeros(m)), dtype=float)
    rdot0 = np.asarray(init.get("rdot", np.zeros(m)), dtype=float)
    if r0.shape != (m,) or rdot0.shape != (m,):
        raise SpecError(f"initial.r and initial.rdot must have length {m}")
    level = spec.get("level", [0.0] * chart.n_h)
    if not isinstance(level, list) or len(level) != chart.n_h:
        raise SpecError(f"level must be a list of {chart.n_h} numbers")
    return ModelBundle(system.name, system, params, default_level=tuple(float(v) for v in level),
                       default_state=(r0, rdot0))


def bundle_from_spec(spec: Any) -> ModelBundle:
    if not isinstance(spec, dict):
        raise SpecError("a model spec must be a JSON object")
    version = spec.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SpecError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    if "model" in spec:
        name = spec["model"]
        if not isinstance(name, str) or name.replace("_", "-").lower() not in MODELS:
            raise SpecError(f"unknown model {name!r}; available: {', '.join(sorted(MODELS))}")
        try:
            return get_model(name, **_parameters(spec.get("parameters")))
        except (TypeError, ValueError) as exc:
            raise SpecError(f"bad parameters for {name}: {exc}") from exc
    return build_system(spec)


def load_spec(path) -> ModelBundle:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SpecError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path} is not valid JSON: {exc}") from exc
    return bundle_from_spec(data)
