"""Command-line front end.

    nonholo check --model snakeboard
    nonholo simulate --model chaplygin-ball --T 10 --h 1e-3 --out run/
    nonholo hamiltonize --spec model.json --mu 0.2

Exit codes: 0 pass, 1 verification failure, 2 input error, 3 unsupported
configuration.  Reports are JSON with sorted keys and a copy of the run
configuration, so the same config and seed give byte-identical output.
"""

from __future__ import annotations

import json
import math
import os
import sys
from dataclasses import asdict, dataclass
from itertools import combinations
from pathlib import Path
from typing import Optional

import click
import numpy as np

from . import dynamics as dyn
from . import hamiltonization as hz
from . import routh as rt
from .compression import CompressedSystem, DegenerateForm
from .specio import SpecError, load_spec
from .system import validate
from .zoo import MODELS, ModelBundle, get_model

PASS, FAIL, INPUT_ERROR, UNSUPPORTED = 0, 1, 2, 3
SCHEMA = "nonholo-report/1"


@dataclass
class RunConfig:
    command: str
    model: Optional[str] = None
    spec: Optional[str] = None
    mu: Optional[list] = None
    h: float = 1e-3
    T: Optional[float] = None
    method: str = "rk4"
    samples: int = 20
    seed: int = 0
    tol: float = 1e-8
    out: Optional[str] = None
    gauge: bool = True
    oracle: bool = False


class InputError(Exception):
    pass


def _clean(obj):
    """JSON-safe copy: numpy scalars to floats, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def dumps(report: dict) -> str:
    return json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"


def resolve_bundle(cfg: RunConfig) -> ModelBundle:
    if (cfg.model is None) == (cfg.spec is None):
        raise InputError("give exactly one of --model or --spec")
    if cfg.spec is not None:
        try:
            return load_spec(cfg.spec)
        except SpecError as exc:
            raise InputError(str(exc)) from exc
    key = cfg.model.replace("_", "-").lower()
    if key not in MODELS:
        raise InputError(f"unknown model {cfg.model!r}; available: {', '.join(sorted(MODELS))}")
    return get_model(key)


def _level(cfg: RunConfig, bundle: ModelBundle) -> np.ndarray:
    nh = bundle.system.chart.n_h
    mu = np.asarray(cfg.mu if cfg.mu is not None else bundle.default_level or [0.0] * nh, dtype=float)
    if mu.shape != (nh,):
        raise InputError(f"--mu needs {nh} value(s) for {bundle.name}, got {len(mu)}")
    return mu


def _gauged(bundle: ModelBundle, cfg: RunConfig, samples: int):
    """Compressed system, gauged by the bundle's B̄ unless disabled."""
    cs = CompressedSystem(bundle.system)
    if bundle.gauge is None or not cfg.gauge:
        return cs, None
    return rt.apply_gauge(cs, bundle.gauge, samples=samples, tol=max(cfg.tol, 1e-10), seed=cfg.seed), bundle.gauge


# ---------------------------------------------------------------------------
# check


def _jacobiator_stats(cs, level, cfg: RunConfig) -> dict:
    leaf = rt.Leaf(cs, level, check_basic=False)
    bracket = hz.LeafBracket(cs)
    rng = np.random.default_rng(cfg.seed)
    dim = 2 * leaf.s
    triples = list(combinations(range(dim), 3))
    diff = lhs_max = 0.0
    count = 0
    for _ in range(cfg.samples):
        u = np.concatenate([hz.sample_leaf(leaf, rng), np.asarray(level, float)])
        for t in triples:
            try:
                res = hz.jacobiator(bracket, *(hz.coordinate_function(i) for i in t), u)
            except np.linalg.LinAlgError:
                continue
            diff = max(diff, abs(res["difference"]))
            lhs_max = max(lhs_max, abs(res["lhs"]))
            count += 1
    return {"evaluations": count, "max_abs_lhs": lhs_max, "max_abs_difference": diff,
            "passed": bool(diff < cfg.tol)}


def run_check(cfg: RunConfig, bundle: ModelBundle) -> tuple[dict, int]:
    system = bundle.system
    report: dict = {}
    val = validate(system, samples=cfg.samples, seed=cfg.seed)
    report["validation"] = val.as_dict()
    ok = val.passed

    cs = CompressedSystem(system)
    raw = rt.is_basic(cs.twist, system, samples=cfg.samples, tol=cfg.tol, seed=cfg.seed)
    basic = {"without_gauge": asdict(raw), "gauge_available": bundle.gauge is not None,
             "gauge_applied": False}
    active, active_basic = cs, raw
    if bundle.gauge is not None and cfg.gauge:
        try:
            gauged, _ = _gauged(bundle, cfg, cfg.samples)
        except rt.GaugeRejected as exc:
            basic["gauge_rejected"] = str(exc)
        else:
            rep = rt.is_basic(gauged.twist, system, samples=cfg.samples, tol=cfg.tol, seed=cfg.seed)
            basic["with_gauge"] = asdict(rep)
            basic["gauge_dynamic_violation"] = gauged.gauge_violation
            basic["gauge_applied"] = True
            active, active_basic = gauged, rep
    basic["basic"] = active_basic.verdict
    report["basic"] = basic
    ok = ok and active_basic.verdict

    rng = np.random.default_rng(cfg.seed)
    nh = system.chart.n_h
    drifts = {name: 0.0 for name in system.chart.h_fiber_names}
    for _ in range(cfg.samples):
        z = rt.sample_cotangent(system, rng)
        for a, name in enumerate(system.chart.h_fiber_names):
            drifts[name] = max(drifts[name], abs(rt.momentum_drift(active, z, np.eye(nh)[a])))
    report["momentum_drift"] = {"max_abs": drifts, "passed": bool(all(v < cfg.tol for v in drifts.values()))}
    ok = ok and report["momentum_drift"]["passed"]

    if not system.h_abelian:
        report["jacobiator"] = {"skipped": "reduced leaf brackets are built for abelian H only"}
    elif not active_basic.verdict:
        report["jacobiator"] = {"skipped": "twist form is not basic; no reduced bracket"}
    else:
        jac = _jacobiator_stats(active, _level(cfg, bundle), cfg)
        report["jacobiator"] = jac
        ok = ok and jac["passed"]
    report["passed"] = bool(ok)
    return report, PASS if ok else FAIL


# ---------------------------------------------------------------------------
# simulate


def run_simulate(cfg: RunConfig, bundle: ModelBundle) -> tuple[dict, int, dict]:
    """Returns (report, exit code, {filename: trajectory})."""
    system = bundle.system
    if bundle.default_state is None:
        raise InputError(f"{bundle.name} has no default initial state")
    r0, rdot0 = (np.asarray(v, dtype=float) for v in bundle.default_state)
    if not system.chart.inside(r0, "Qbar"):
        raise InputError("initial state lies outside the chart ranges")
    T = 10.0 if cfg.T is None else cfg.T
    if cfg.h <= 0 or T < 0:
        raise InputError("--h must be positive and --T nonnegative")
    cs = CompressedSystem(system)
    traj = dyn.integrate_compressed(cs, np.concatenate([r0, rdot0]), cfg.h, T, cfg.method)
    obs = {"energy": dyn.energy_observable(cs)}
    nh = system.chart.n_h
    for a, name in enumerate(system.chart.h_fiber_names):
        obs["momentum_" + name] = dyn.momentum_observable(cs, np.eye(nh)[a])
    drift = dyn.monitor(traj, obs)
    report = {"monitor": drift.as_dict(), "exit_flag": traj.exit_flag, "steps": traj.steps,
              "rows": int(len(traj.times)), "final_time": float(traj.times[-1])}
    files = {"trajectory.csv": traj}
    ok = traj.completed
    if cfg.oracle:
        full = dyn.dae_oracle(system, dyn.lift_state(system, r0, rdot0), cfg.h, T)
        k = min(len(full.times), len(traj.times))
        gap = float(np.max(np.abs(dyn.project_to_qbar(system, full)[:k] - traj.states[:k])))
        res = float(np.max(full.observables["constraint_residual"]))
        report["oracle"] = {"max_discrepancy": gap, "max_constraint_residual": res,
                            "exit_flag": full.exit_flag, "rows": int(len(full.times))}
        files["oracle.csv"] = full
        # the reduced flow is compared against the oracle in sup norm
        ok = ok and full.completed and gap < max(cfg.tol, 1e-6) and res < max(cfg.tol, 1e-8)
    report["passed"] = bool(ok)
    return report, PASS if ok else FAIL, files


# ---------------------------------------------------------------------------
# hamiltonize


def default_grid(bundle: ModelBundle, points: int = 200) -> np.ndarray:
    """A straight path across the shape chart, staying clear of range ends."""
    chart = bundle.system.chart
    cols = []
    for name in chart.shape_names:
        rg = chart.range_of(name)
        if isinstance(rg, tuple):
            lo, hi = rg
            pad = 0.1 * (hi - lo)
            cols.append(np.linspace(lo + pad, hi - pad, points))
        else:
            cols.append(np.linspace(-1.0, 2.0, points))
    return np.column_stack(cols)


def _candidate_stats(leaf, routh, cand, cfg, points) -> dict:
    stan = pde_t = pde_p = 0.0
    for w in points:
        stan = max(stan, hz.stanchenko_residual(leaf, cand, w).max_abs())
        t, p = hz.conformal_pde_residual(routh, cand, w[: leaf.s])
        pde_t = max(pde_t, float(np.max(np.abs(t), initial=0.0)))
        pde_p = max(pde_p, float(np.max(np.abs(p), initial=0.0)))
    closed = hz.closedness_check(leaf, cand, samples=cfg.samples, seed=cfg.seed)
    return {"stanchenko_residual": stan, "pde_triple_residual": pde_t, "pde_pair_residual": pde_p,
            "closedness": closed, "closes": bool(closed < cfg.tol)}


def run_hamiltonize(cfg: RunConfig, bundle: ModelBundle) -> tuple[dict, int]:
    system = bundle.system
    level = _level(cfg, bundle)
    if not system.h_abelian:
        cs = CompressedSystem(system)
        rep = rt.is_basic(cs.twist, system, samples=cfg.samples, tol=cfg.tol, seed=cfg.seed)
        report = {"feasibility": {
            "status": "unsupported",
            "reason": "the symmetry group H is nonabelian; the reduced leaf and the conformal "
                      "factor PDE are implemented for abelian H only",
            "twist_basic": rep.verdict, "twist_basic_violation": rep.max_violation},
            "passed": False}
        return report, UNSUPPORTED
    try:
        cs, _ = _gauged(bundle, cfg, cfg.samples)
    except rt.GaugeRejected as exc:
        return {"error": str(exc), "passed": False}, FAIL
    try:
        leaf = rt.Leaf(cs, level)
        routh = rt.RouthData(cs, level)
    except rt.NotBasic as exc:
        return {"error": str(exc), "passed": False,
                "hint": "the twist form must be basic; drop --no-gauge if a gauge is available"}, FAIL
    except rt.Unsupported as exc:
        return {"error": str(exc), "passed": False}, UNSUPPORTED

    rng = np.random.default_rng(cfg.seed)
    points = [hz.sample_leaf(leaf, rng) for _ in range(cfg.samples)]
    report: dict = {"level": level}
    candidates = {}
    if bundle.conformal_factor is not None:
        own = hz.candidate_from_bundle(bundle)
        candidates["model_factor"] = own
        candidates["model_factor_reciprocal"] = own.reciprocal()
    else:
        candidates["constant"] = hz.constant_candidate()
    report["candidates"] = {k: _candidate_stats(leaf, routh, c, cfg, points) for k, c in candidates.items()}

    grid = default_grid(bundle)
    solve = hz.solve_conformal_ode(routh, grid, method="pde", tol=cfg.tol)
    sol = solve.as_dict()
    if solve.feasible:
        sol["relative_error"] = {k: hz.relative_error_on_grid(solve, c) for k, c in candidates.items()}
    report["solve"] = sol

    closing = [k for k, v in report["candidates"].items() if v["closes"]]
    if closing:
        r0 = np.asarray(bundle.default_state[0], float) if bundle.default_state else np.zeros(system.m)
        w0 = np.concatenate([r0[: leaf.s], np.linspace(0.3, 0.1, leaf.s)])
        T = 3.0 if cfg.T is None else cfg.T
        try:
            err = hz.reparameterized_flow_error(leaf, candidates[closing[0]], w0, T)
            report["reparameterization"] = {"candidate": closing[0], "T": T, "max_error": err,
                                            "passed": bool(err < max(cfg.tol, 1e-7))}
        except (RuntimeError, DegenerateForm) as exc:
            report["reparameterization"] = {"candidate": closing[0], "error": str(exc), "passed": False}
    else:
        report["reparameterization"] = {"skipped": "no candidate closes the leaf form"}

    if "model_factor" in candidates:
        main = report["candidates"]["model_factor"]
        ok = main["closes"] and solve.feasible and sol["relative_error"]["model_factor"] < 1e-6
    else:
        ok = solve.feasible
    ok = ok and report["reparameterization"].get("passed", False)
    report["passed"] = bool(ok)
    return report, PASS if ok else FAIL


# ---------------------------------------------------------------------------
# click wiring


def _parse_mu(ctx, param, value):
    if value is None:
        return None
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter("expected comma-separated reals, e.g. 0.2 or 1,0.3,0")


def _thread_cap():
    raw = os.environ.get("NONHOLO_NUM_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise InputError(f"NONHOLO_NUM_THREADS must be a positive integer, got {raw!r}")
    return n


def common(fn):
    opts = [
        click.option("--model", help="built-in model name: " + ", ".join(sorted(MODELS))),
        click.option("--spec", type=click.Path(), help="JSON model spec"),
        click.option("--mu", callback=_parse_mu, help="momentum level, comma-separated"),
        click.option("--h", "h", type=float, default=1e-3, show_default=True, help="time step"),
        click.option("--T", "T", type=float, default=None, help="horizon"),
        click.option("--method", type=click.Choice(["rk4", "rk45"]), default="rk4", show_default=True),
        click.option("--samples", type=click.IntRange(min=1), default=20, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--tol", type=float, default=1e-8, show_default=True),
        click.option("--out", type=click.Path(file_okay=False), default=None, help="output directory"),
        click.option("--no-gauge", "no_gauge", is_flag=True, help="ignore the model's gauge form"),
        click.option("--oracle", is_flag=True, help="also run the full constrained oracle (simulate)"),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _config(command, kw) -> RunConfig:
    return RunConfig(command=command, model=kw["model"], spec=kw["spec"], mu=kw["mu"], h=kw["h"],
                     T=kw["T"], method=kw["method"], samples=kw["samples"], seed=kw["seed"],
                     tol=kw["tol"], out=kw["out"], gauge=not kw["no_gauge"], oracle=kw["oracle"])


def _emit(cfg: RunConfig, report: dict, code: int, name: str, files=None):
    report = dict(report)
    report["schema"] = SCHEMA
    report["config"] = asdict(cfg)
    report["exit_code"] = code
    text = dumps(report)
    if cfg.out is not None:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
        for fname, traj in (files or {}).items():
            traj.to_csv(out / fname)
    click.echo(text, nl=False)
    sys.exit(code)


def _run(command, kw, runner, name):
    cfg = _config(command, kw)
    try:
        _thread_cap()
        bundle = resolve_bundle(cfg)
        result = runner(cfg, bundle)
    except InputError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(INPUT_ERROR)
    except rt.Unsupported as exc:
        _emit(cfg, {"error": str(exc), "passed": False}, UNSUPPORTED, name)
    report, code, *files = result
    _emit(cfg, report, code, name, files[0] if files else None)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def main():
    """Reduction, simulation and Hamiltonization checks for nonholonomic systems."""


@main.command()
@common
def check(**kw):
    """Validate the model, test basic-ness, momentum drift and the Jacobiator."""
    _run("check", kw, run_check, "check.json")


@main.command()
@common
def simulate(**kw):
    """Integrate the compressed dynamics; writes trajectory.csv and monitor.json."""
    if kw["out"] is None:
        kw["out"] = "nonholo-out"
    _run("simulate", kw, run_simulate, "monitor.json")


@main.command()
@common
def hamiltonize(**kw):
    """Test conformal factors, solve for one and check the time reparameterization."""
    _run("hamiltonize", kw, run_hamiltonize, "hamiltonize.json")


if __name__ == "__main__":
    main()
