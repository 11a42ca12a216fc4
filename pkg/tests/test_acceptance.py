"""Acceptance suite: one test per criterion.

Each test records a one-line verdict in RESULTS; conftest prints them at the
end of the run.  Run this file directly to print the lines without pytest.
"""

import math
import time

import numpy as np
import pytest

from nonholo import autodiff as ad
from nonholo import dynamics as dyn
from nonholo import forms as fm
from nonholo import hamiltonization as hz
from nonholo import routh as rt
from nonholo import zoo
from nonholo.cli import RunConfig, default_grid, dumps, run_check
from nonholo.compression import CompressedSystem, compressed_vector_field
from nonholo.system import PhaseState

RESULTS = {}


def record(k, ok, detail):
    RESULTS[k] = f"CRITERION {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, RESULTS[k]


@pytest.fixture(scope="module")
def models():
    sb, ball, se2 = zoo.snakeboard(), zoo.chaplygin_ball(), zoo.se2_toy()
    gauged = rt.apply_gauge(CompressedSystem(ball.system), ball.gauge, samples=5)
    return {"snakeboard": sb, "ball": ball, "se2": se2, "ball_gauged": gauged}


def snake_states(sb, n, seed):
    rng = np.random.default_rng(seed)
    th = rng.uniform(-math.pi, math.pi, n)
    ph = rng.uniform(0.2, math.pi - 0.2, n)
    ps = rng.uniform(-math.pi, math.pi, n)
    return np.column_stack([th, ph, ps, rng.normal(size=(n, 3))])


def test_criterion_01_snakeboard_jk(models):
    sb = models["snakeboard"]
    cs = CompressedSystem(sb.system)
    states = snake_states(sb, 1000, 1)
    t0 = time.perf_counter()
    err = 0.0
    for z in states:
        got = cs.jk_form.at(z).coeffs[(0, 1)]
        err = max(err, abs(got - sb.oracles["jk_coefficient"](z[0], z[1], *z[3:])))
    dt = time.perf_counter() - t0
    record(1, err < 1e-10 and dt < 1.0, f"max |JK - reference| = {err:.2e} over 1000 states, {dt:.2f} s")


def test_criterion_02_snakeboard_accelerations(models):
    sb = models["snakeboard"]
    states = snake_states(sb, 1000, 2)
    e_th = e_ph = e_dal = 0.0
    for y in states:
        r, v = y[:3], y[3:]
        acc = compressed_vector_field(sb.system, PhaseState(r, v, space="Qbar"))[3:]
        th_dd, ph_dd = sb.oracles["lr_accelerations"](r[1], v[0], v[1])
        e_th = max(e_th, abs(acc[0] - th_dd))
        e_ph = max(e_ph, abs(acc[1] - ph_dd))
        d_th, d_ph = sb.oracles["dalembert_accelerations"](r[1], v[0], v[1])
        e_dal = max(e_dal, abs(acc[0] - d_th), abs(acc[1] - d_ph))
    record(2, max(e_th, e_ph) < 1e-10,
           f"theta error {e_th:.2e}, phi error {e_ph:.2e} against the reference pair "
           f"(derived d'Alembert pair: {e_dal:.2e}; see decision ledger)")


def test_criterion_03_conservation(models):
    sb, ball = models["snakeboard"], models["ball"]
    out = []
    ok = True
    for name, b, tol_mom, tol_E in (("snakeboard", sb, 1e-9, 1e-8), ("ball", ball, 1e-8, 1e-7)):
        cs = CompressedSystem(b.system)
        r0, v0 = b.default_state
        t0 = time.perf_counter()
        tr = dyn.integrate_compressed(cs, np.concatenate([r0, v0]), 1e-3, 10.0)
        dt = time.perf_counter() - t0
        E = dyn.energy_observable(cs)
        m = cs.m
        if name == "snakeboard":
            mom = lambda y: sb.oracles["conserved"](cs.legendre(y[:m], y[m:]))
        else:
            mom = lambda y: ball.oracles["conserved"](np.concatenate([y[:m], cs.legendre(y[:m], y[m:])]))
        rows = tr.states[::10]
        dE = max(abs(E(y) - E(tr.states[0])) for y in rows)
        dM = max(abs(mom(y) - mom(tr.states[0])) for y in rows)
        good = tr.completed and dE < tol_E and dM < tol_mom and dt < 10.0
        ok = ok and good
        out.append(f"{name}: dM={dM:.1e} dE={dE:.1e} {dt:.1f}s")
    record(3, ok, "; ".join(out))


def test_criterion_04_basic_detection(models):
    ball, sb, se2 = models["ball"], models["snakeboard"], models["se2"]
    raw = rt.is_basic(CompressedSystem(ball.system).jk_form, ball.system, samples=50)
    gauged = rt.is_basic(models["ball_gauged"].twist, ball.system, samples=50)
    s = rt.is_basic(CompressedSystem(sb.system).jk_form, sb.system, samples=50)
    e = rt.is_basic(CompressedSystem(se2.system).jk_form, se2.system, samples=50)
    ok = raw.max_violation > 1e-2 and gauged.max_violation < 1e-10 and s.max_violation < 1e-10 \
        and e.max_violation < 1e-10
    record(4, ok, f"ball JK {raw.max_violation:.1e}, ball JK+B {gauged.max_violation:.1e}, "
                  f"snakeboard {s.max_violation:.1e}, se2 {e.max_violation:.1e}")


def test_criterion_05_gauge_dynamics(models):
    ball, gauged = models["ball"], models["ball_gauged"]
    cs = CompressedSystem(ball.system)
    rng = np.random.default_rng(5)
    contr = diff = 0.0
    for _ in range(1000):
        z = rt.sample_cotangent(ball.system, rng)
        X = cs.hamiltonian_field(z)
        contr = max(contr, ball.gauge.at(z).contract(X).max_abs())
        diff = max(diff, float(np.max(np.abs(gauged.hamiltonian_field(z) - X))))
    record(5, contr < 1e-10 and diff < 1e-10, f"max |i_X B| = {contr:.1e}, max field change = {diff:.1e}")


def _factor_stats(bundle, cs, level, cand, grid_points=200):
    leaf = rt.Leaf(cs, level)
    rd = rt.RouthData(cs, level)
    rng = np.random.default_rng(6)
    pts = [hz.sample_leaf(leaf, rng) for _ in range(20)]
    stan = max(hz.stanchenko_residual(leaf, cand, w).max_abs() for w in pts)
    closed = hz.closedness_check(leaf, cand, samples=20)
    pde = 0.0
    for w in pts:
        t, p = hz.conformal_pde_residual(rd, cand, w[: leaf.s])
        pde = max(pde, float(np.max(np.abs(t))), float(np.max(np.abs(p))))
    rep = hz.solve_conformal_ode(rd, default_grid(bundle, grid_points))
    rel = hz.relative_error_on_grid(rep, cand) if rep.feasible else float("inf")
    return stan, closed, pde, rel


def test_criterion_06_conformal_factors(models):
    sb, ball = models["snakeboard"], models["ball"]
    f_sb = hz.candidate_from_bundle(sb)
    s1, c1, p1, r1 = _factor_stats(sb, CompressedSystem(sb.system), sb.default_level, f_sb)
    f_ball = hz.candidate_from_bundle(ball)
    s2, c2, _, r2 = _factor_stats(ball, models["ball_gauged"], ball.default_level, f_ball)
    leaf = rt.Leaf(models["ball_gauged"], ball.default_level)
    c2r = hz.closedness_check(leaf, f_ball.reciprocal(), samples=20)
    snake_ok = max(s1, c1, p1) < 1e-9 and r1 < 1e-6
    ball_ok = max(s2, c2) < 1e-9 and r2 < 1e-6
    record(6, snake_ok and ball_ok,
           f"snakeboard stanchenko {s1:.1e} closed {c1:.1e} pde {p1:.1e} solve {r1:.1e} | "
           f"ball model factor stanchenko {s2:.1e} closed {c2:.1e} solve {r2:.1e} "
           f"(reciprocal closes to {c2r:.1e}; see decision ledger)")


def test_criterion_07_jacobiator(models):
    sb = models["snakeboard"]
    cs = CompressedSystem(sb.system)
    plain = hz.LeafBracket(cs)
    scaled = hz.LeafBracket(cs, scale=hz.candidate_from_bundle(sb).reciprocal())
    rng = np.random.default_rng(7)
    c = hz.coordinate_function
    worst_diff = worst_scaled = biggest_lhs = 0.0
    for _ in range(100):
        x = sb.system.chart.sample(rng, "Qbar")[:2]
        u = np.concatenate([x, rng.normal(size=2), [rng.normal()]])
        for trip in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
            a = hz.jacobiator(plain, *(c(i) for i in trip), u)
            b = hz.jacobiator(scaled, *(c(i) for i in trip), u)
            worst_diff = max(worst_diff, abs(a["difference"]))
            biggest_lhs = max(biggest_lhs, abs(a["lhs"]))
            worst_scaled = max(worst_scaled, abs(b["lhs"]))
    record(7, worst_diff < 1e-8 and worst_scaled < 1e-8,
           f"max |lhs - rhs| = {worst_diff:.1e} (max |lhs| = {biggest_lhs:.2f}), scaled max |lhs| = {worst_scaled:.1e}")


def test_criterion_08_oracle(models):
    out = []
    ok = True
    for name in ("snakeboard", "ball", "se2"):
        b = models[name]
        r0, v0 = b.default_state
        rep = dyn.oracle_discrepancy(b.system, r0, v0, 1e-3, 5.0)
        good = rep["max_discrepancy"] < 1e-6 and rep["max_constraint_residual"] < 1e-8 \
            and rep["oracle_exit"] is None and rep["reduced_exit"] is None
        ok = ok and good
        out.append(f"{name}: gap {rep['max_discrepancy']:.1e} residual {rep['max_constraint_residual']:.1e}")
    record(8, ok, "; ".join(out))


def test_criterion_09_lagrange_routh(models):
    worst = 0.0
    for name in ("snakeboard", "ball", "se2"):
        b = models[name]
        S = b.system
        cs = models["ball_gauged"] if name == "ball" else CompressedSystem(S)
        m, s = S.m, S.chart.n_shape
        r0, v0 = b.default_state
        tr = dyn.integrate_compressed(cs, np.concatenate([r0, v0]), 1e-3, 2.0)
        for y in tr.states[::50]:
            r, rd = y[:m], y[m:]
            rdd = cs.tangent_field(r, rd)[m:]
            Z, _ = rt._generators(S, r)
            mu = np.asarray(Z).T @ cs.legendre(r, rd)
            data = rt.RouthData(cs, mu, check_basic=False)
            fib = None if S.h_abelian else r[s:]
            res = rt.lagrange_routh_residual(data, (r[:s], rd[:s], rdd[:s]), fib,
                                             None if fib is None else rd[s:])
            worst = max(worst, float(np.max(np.abs(res))))
    se2 = models["se2"]
    rng = np.random.default_rng(9)
    orbit = 0.0
    cs = CompressedSystem(se2.system)
    for _ in range(1000):
        mu = float(rng.uniform(-1, 1))
        rd = rt.RouthData(cs, se2.oracles["level"](mu), check_basic=False)
        x, xd, fib = rng.uniform(-2, 2, 2), rng.normal(size=2), rng.uniform(-2, 2, 3)
        yd, zd, thd = rd.orbit_velocity(x, xd, fib)
        ref = se2.oracles["orbit_rates"](fib[1] - mu * fib[0], fib[2], mu)
        orbit = max(orbit, abs(zd - mu * yd - ref[0]), abs(thd - ref[1]))
    record(9, worst < 1e-8 and orbit < 1e-10, f"max LR residual {worst:.1e}, se2 orbit error {orbit:.1e}")


def test_criterion_10_numerics(models):
    rng = np.random.default_rng(10)
    one = fm.CoordinateForm.from_coefficients(1, 4, {
        (0,): lambda p: ad.sin(p[1] * p[2]) + p[3] ** 2,
        (1,): lambda p: p[0] ** 3 * ad.cos(p[3]),
        (2,): lambda p: ad.exp(0.3 * p[0]) * p[1],
        (3,): lambda p: p[0] * p[1] * p[2]})
    f0 = fm.function_form(lambda p: ad.sin(p[0] * p[1]) * p[2] + p[3] ** 3, 4)
    dd = 0.0
    for _ in range(50):
        p = rng.uniform(-1.5, 1.5, 4)
        dd = max(dd, one.d().d().at(p).max_abs(), f0.d().d().at(p).max_abs())
    g = lambda v: ad.sin(v[0] * v[1]) + ad.exp(0.2 * v[2]) / (1.5 + ad.cos(v[0]))
    gv = lambda v: float(ad.value_of(g(v)))
    rel = 0.0
    for _ in range(50):
        x = rng.uniform(-1, 1, 3)
        exact = ad.gradient(g, x)
        h = 1e-5
        fd = np.array([(gv(x + h * e) - gv(x - h * e)) / (2 * h) for e in np.eye(3)])
        rel = max(rel, float(np.max(np.abs(exact - fd)) / max(1e-12, np.max(np.abs(exact)))))

    def osc_err(h):
        tr = dyn.integrate(lambda y: np.array([y[1], -y[0]]), [1.0, 0.0], h, 2.0)
        return abs(tr.final[0] - math.cos(2.0))
    ratio = osc_err(0.1) / osc_err(0.05)
    cfg = RunConfig("check", model="snakeboard", samples=3, seed=11)
    a = dumps(run_check(cfg, models["snakeboard"])[0])
    b = dumps(run_check(cfg, zoo.snakeboard())[0])
    ok = dd < 1e-9 and rel < 1e-6 and 12 <= ratio <= 20 and a == b
    record(10, ok, f"d(d) {dd:.1e}, AD vs FD {rel:.1e}, RK4 ratio {ratio:.2f}, reports identical: {a == b}")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
