"""Conformal factors for almost symplectic leaves and reduced brackets.

A conformal factor f for a leaf (x, p̃, ω) is a nonvanishing function of the
shape coordinates with d(fω) = 0.  Two sufficient/equivalent routes are
provided: the Stanchenko residual df∧Θ - f(β + 𝔅) with Θ = p̃ dx, and the
coordinate PDE system built from the horizontal metric and Γ_B.  Rescaling
the reduced bracket by 1/f then gives a Poisson bracket, which the
Jacobiator routine measures directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from . import autodiff as ad
from .forms import CoordinateForm, FormValue, differential
from .routh import Leaf, RouthData, Unsupported

GL_NODES = 3


@dataclass
class ConformalCandidate:
    """A candidate conformal factor f(x) on the shape space.

    ``f`` must accept a plain array or an ADScalar array of the shape
    coordinates and return a scalar of the same kind.
    """

    f: Callable
    provenance: str = "user"   # model | user | solved
    name: str = "f"
    info: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.f(x)

    def value(self, x) -> float:
        return float(ad.value_of(self.f(np.asarray(x, dtype=float))))

    def log_gradient(self, x) -> np.ndarray:
        v = self.f(ad.seed_array(np.asarray(x, dtype=float)))
        if not isinstance(v, ad.ADScalar):
            return np.zeros(len(x))
        return np.asarray(v.partials) / float(v.value)

    def reciprocal(self) -> "ConformalCandidate":
        return ConformalCandidate(lambda x: 1.0 / self.f(x), self.provenance, f"1/{self.name}", dict(self.info))


def constant_candidate(c: float = 1.0) -> ConformalCandidate:
    return ConformalCandidate(lambda x: c + 0.0 * x[0], "user", f"{c:g}")


def candidate_from_bundle(bundle) -> ConformalCandidate:
    f = bundle.conformal_factor
    if f is None:
        raise ValueError(f"model {bundle.name} ships no conformal factor")
    return ConformalCandidate(f, "model", "f")


class NotConformal(ValueError):
    pass


# ---------------------------------------------------------------------------
# leaf conditions


def _lift(candidate: ConformalCandidate, s: int):
    """f as a function on the leaf chart (x, p̃)."""
    return lambda w: candidate(w[:s])


def stanchenko_form(leaf: Leaf, candidate: ConformalCandidate) -> CoordinateForm:
    """df∧Θ - f(β + 𝔅) on the leaf chart."""
    fl = _lift(candidate, leaf.s)
    df = differential(fl, leaf.dim, candidate.name)
    return df.wedge(leaf.liouville) - (leaf.beta + leaf.bfrak).scale(fl)


def stanchenko_residual(leaf: Leaf, candidate: ConformalCandidate, point) -> FormValue:
    return stanchenko_form(leaf, candidate).at(np.asarray(point, dtype=float))


def scaled_leaf_form(leaf: Leaf, candidate: ConformalCandidate) -> CoordinateForm:
    return leaf.form.scale(_lift(candidate, leaf.s))


def sample_leaf(leaf: Leaf, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    chart = leaf.system.chart
    r = chart.sample(rng, "Qbar")
    return np.concatenate([r[: leaf.s], scale * rng.normal(size=leaf.s)])


def closedness_check(leaf: Leaf, candidate: ConformalCandidate, samples: int = 50,
                     seed: int = 0) -> float:
    """max |d(f·ω_leaf)| coefficient over random leaf points."""
    dform = scaled_leaf_form(leaf, candidate).d()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        worst = max(worst, dform.at(sample_leaf(leaf, rng)).max_abs())
    return worst


def invariant_density_residual(leaf: Leaf, density: Callable, point, h: float = 1e-5) -> float:
    """div(ρX) in the leaf chart by central differences (Lebesgue = ω^s up to a constant).

    A conformal factor f of an s = 2 leaf makes ρ = f an invariant density; this
    is an independent check that does not reuse the leaf 2-form's derivative.
    """
    w = np.asarray(point, dtype=float)
    tot = 0.0
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        tot += (density(w + e) * leaf.vector_field(w + e)[i]
                - density(w - e) * leaf.vector_field(w - e)[i]) / (2 * h)
    return float(tot)


# ---------------------------------------------------------------------------
# coordinate PDE system


def _pde_arrays(routh: RouthData, x):
    if not routh.system.h_abelian:
        raise Unsupported("the conformal-factor PDE system is only available for abelian H")
    hc = routh.connection(x)
    Gs, Ga = routh.gamma_B(x)
    return np.asarray(hc.kH), Gs, Ga, np.asarray(hc.F)


def _triple_system(kH, Gs):
    """Rows a·∇log f = rhs for every triple (i, j, k)."""
    s = kH.shape[0]
    rows, rhs, keys = [], [], []
    for i in range(s):
        for j in range(s):
            for k in range(s):
                row = np.zeros(s)
                row[i] += kH[j, k]
                row[k] += kH[i, j]
                row[j] -= 2 * kH[i, k]
                rows.append(row)
                rhs.append(kH[:, k] @ Gs[:, i, j] + kH[:, i] @ Gs[:, k, j])
                keys.append((i, j, k))
    return np.array(rows), np.array(rhs), keys


def conformal_pde_residual(routh: RouthData, candidate: ConformalCandidate, point):
    """(triple residual array [i,j,k], pair residual array [i,j]) at x."""
    x = np.asarray(point, dtype=float)
    kH, Gs, Ga, F = _pde_arrays(routh, x)
    fv = candidate(ad.seed_array(x))
    if isinstance(fv, ad.ADScalar):
        f, df = float(fv.value), np.asarray(fv.partials)
    else:
        f, df = float(fv), np.zeros(len(x))
    rows, rhs, keys = _triple_system(kH, Gs)
    s = len(x)
    triple = (rows @ df - f * rhs).reshape(s, s, s)
    pair = np.einsum("b,bij->ij", routh.mu, F - np.swapaxes(Ga, 1, 2))
    return triple, pair


# ---------------------------------------------------------------------------
# solving for f


@dataclass
class SolveReport:
    feasible: bool
    method: str
    decoupled: bool
    message: str
    candidate: Optional[ConformalCandidate] = None
    grid: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    consistency: float = 0.0
    pde_residual: float = float("nan")

    def as_dict(self) -> dict:
        out = {"feasible": self.feasible, "method": self.method, "decoupled": self.decoupled,
               "message": self.message, "consistency": self.consistency,
               "pde_residual": self.pde_residual}
        if self.values is not None:
            out["grid_points"] = int(len(self.values))
        return out


def _closedness_system(leaf: Leaf, x, rng, momenta: int = 3):
    """Rows of dlog f ∧ ω + dω = 0 (linear in ∇log f) at several p̃ values over x."""
    s = leaf.s
    rows, rhs = [], []
    form, dform = leaf.form, leaf.form.d()
    for _ in range(momenta):
        w = np.concatenate([x, rng.normal(size=s)])
        W = form.at(w).matrix()
        dW = dform.at(w).coeffs
        for (i, j, k) in combinations(range(2 * s), 3):
            row = np.zeros(s)
            # (a∧ω)_ijk = a_i ω_jk - a_j ω_ik + a_k ω_ij, a supported on x
            for u, v1, v2, sg in ((i, j, k, 1.0), (j, i, k, -1.0), (k, i, j, 1.0)):
                if u < s:
                    row[u] += sg * W[v1, v2]
            rows.append(row)
            rhs.append(-float(dW.get((i, j, k), 0.0)))
    return np.array(rows), np.array(rhs)


def log_gradient_field(routh: RouthData, x, method: str = "pde", rng=None):
    """Least-squares ∇log f at x with the consistency residual and decoupling flag."""
    x = np.asarray(x, dtype=float)
    if method == "pde":
        kH, Gs, _, _ = _pde_arrays(routh, x)
        rows, rhs, _ = _triple_system(kH, Gs)
    elif method == "closedness":
        leaf = Leaf(routh.compressed, routh.mu, check_basic=False)
        rng = np.random.default_rng(0) if rng is None else rng
        rows, rhs = _closedness_system(leaf, x, rng)
    else:
        raise ValueError(f"unknown method {method!r}")
    scale = max(1.0, float(np.max(np.abs(rows))))
    active = np.max(np.abs(rows), axis=1) > 1e-12 * scale
    decoupled = bool(np.all(np.sum(np.abs(rows[active]) > 1e-12 * scale, axis=1) <= 1))
    # equations with no ∂f term must hold on their own
    bare = float(np.max(np.abs(rhs[~active]), initial=0.0))
    sol, *_ = np.linalg.lstsq(rows[active], rhs[active], rcond=None)
    resid = float(np.max(np.abs(rows[active] @ sol - rhs[active]), initial=0.0))
    return sol, max(resid, bare), decoupled


def solve_conformal_ode(routh: RouthData, grid, method: str = "pde", tol: float = 1e-8,
                        require_decoupled: bool = False) -> SolveReport:
    """Integrate log f along a polyline of shape points with f(grid[0]) = 1.

    At each quadrature node ∇log f is obtained from the linear conditions
    (``method='pde'``: the triple PDE system; ``'closedness'``: d(fω) = 0 on
    the leaf) and the consistency of the overdetermined system is recorded.
    An inconsistent system yields an infeasibility report.
    """
    if not routh.system.h_abelian:
        raise Unsupported("conformal factors are only solved for abelian H")
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.shape[1] != routh.s:
        raise ValueError(f"grid points need {routh.s} shape coordinates")
    nodes, weights = np.polynomial.legendre.leggauss(GL_NODES)
    rng = np.random.default_rng(0)
    worst = 0.0
    decoupled = True
    logf = np.zeros(len(grid))
    for n in range(1, len(grid)):
        a, b = grid[n - 1], grid[n]
        acc = 0.0
        for t, wgt in zip(nodes, weights):
            x = a + 0.5 * (t + 1.0) * (b - a)
            g, res, dec = log_gradient_field(routh, x, method, rng)
            worst = max(worst, res)
            decoupled = decoupled and dec
            acc += 0.5 * wgt * float(g @ (b - a))
        logf[n] = logf[n - 1] + acc
    if require_decoupled and not decoupled:
        return SolveReport(False, method, False, "PDE system does not decouple into quadratures",
                           consistency=worst)
    if worst > tol:
        return SolveReport(False, method, decoupled,
                           f"conditions are inconsistent (least-squares residual {worst:.3e})",
                           grid=grid, values=np.exp(logf), consistency=worst)
    values = np.exp(logf)
    candidate = _interpolated_candidate(grid, values)
    pde = float("nan")
    if method == "pde":
        pde = 0.0
        for x, fv in zip(grid, values):
            kH, Gs, _, _ = _pde_arrays(routh, x)
            rows, rhs, _ = _triple_system(kH, Gs)
            g, _, _ = log_gradient_field(routh, x, method)
            pde = max(pde, float(np.max(np.abs(fv * (rows @ g - rhs)))))
    return SolveReport(True, method, decoupled, "ok", candidate, grid, values, worst, pde)


def _interpolated_candidate(grid, values) -> ConformalCandidate:
    """Piecewise-linear f along the grid path (parameterized by nearest grid point)."""
    grid = np.asarray(grid)

    def f(x):
        xv = np.asarray(ad.value_of(x), dtype=float)
        i = int(np.argmin(np.linalg.norm(grid - xv, axis=1)))
        return float(values[i])

    return ConformalCandidate(f, "solved", "f_solved", {"grid": grid, "values": values})


def relative_error_on_grid(report: SolveReport, reference: ConformalCandidate) -> float:
    """max |f_solved/f_ref - 1| after normalizing the reference at grid[0]."""
    ref = np.array([reference.value(x) for x in report.grid])
    ref = ref / ref[0]
    return float(np.max(np.abs(report.values / ref - 1.0)))


# ---------------------------------------------------------------------------
# brackets and the Jacobiator


class CanonicalBracket:
    """Canonical Poisson bracket on R^{2n} in (q, p) order."""

    def __init__(self, half: int):
        self.dim = 2 * half
        self.half = half

    def tensor(self, u):
        n = self.half
        P = np.zeros((self.dim, self.dim))
        P[:n, n:] = np.eye(n)
        P[n:, :n] = -np.eye(n)
        if isinstance(u, ad.ADScalar):
            return ad.constant(P, u.n)
        return P

    def three_form(self, u) -> FormValue:
        return FormValue(3, self.dim, {})


class LeafBracket:
    """Reduced bracket on (x, p̃, μ) assembled from the almost symplectic leaves.

    Π = -W⁻¹ on each leaf (W the leaf 2-form matrix) and zero in the μ
    directions; {F, G} = ∇Fᵀ Π ∇G.  An optional scale g multiplies the bracket.
    """

    def __init__(self, compressed, scale: Optional[ConformalCandidate] = None):
        self.compressed = compressed
        system = compressed.system
        self.s = system.chart.n_shape
        self.h = system.chart.n_h
        self.dim = 2 * self.s + self.h
        self.scale = scale
        self._leaves = {}

    def leaf(self, mu) -> Leaf:
        key = tuple(np.round(np.asarray(mu, dtype=float), 15))
        if key not in self._leaves:
            self._leaves[key] = Leaf(self.compressed, np.asarray(key), check_basic=False)
        return self._leaves[key]

    def _mu(self, u):
        return np.asarray(ad.value_of(u), dtype=float)[2 * self.s:]

    def leaf_form(self, mu) -> CoordinateForm:
        leaf = self.leaf(mu)
        if self.scale is None:
            return leaf.form
        inv = self.scale
        return leaf.form.scale(lambda w: 1.0 / inv(w[: self.s]))

    def tensor(self, u):
        d2 = 2 * self.s
        form = self.leaf_form(self._mu(u))
        comps = form.components(u[:d2])
        rows = [[0.0] * d2 for _ in range(d2)]
        for (a, b), v in comps.items():
            rows[a][b] = v
            rows[b][a] = -v
        W = ad.stack(rows)
        if isinstance(u, ad.ADScalar) and not isinstance(W, ad.ADScalar):
            W = ad.constant(W, u.n)
        P = -ad.inv(W)
        if isinstance(P, ad.ADScalar):
            full = ad.constant(np.zeros((self.dim, self.dim)), u.n)
            val = full.value.copy()
            par = full.partials.copy()
            val[:d2, :d2] = P.value
            par[:d2, :d2] = P.partials
            return ad.ADScalar(val, par)
        out = np.zeros((self.dim, self.dim))
        out[:d2, :d2] = P
        return out

    def three_form(self, u) -> FormValue:
        """dω on the leaf through u, padded to the full (x, p̃, μ) dimension."""
        d2 = 2 * self.s
        u = np.asarray(u, dtype=float)
        val = self.leaf_form(u[d2:]).d().at(u[:d2])
        return FormValue(3, self.dim, dict(val.coeffs))

    def bracket(self, F, G, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(_grad(F, u) @ self.tensor(u) @ _grad(G, u))


def _grad(F, u):
    v = F(ad.seed_array(u))
    if not isinstance(v, ad.ADScalar):
        return np.zeros(len(u))
    return np.asarray(v.partials, dtype=float)


def _grad_ad(F, u):
    """∇F as an order-1 AD array in the standard seeding of u."""
    v = F(ad.seed_array(u, 2))
    n = len(u)
    if not isinstance(v, ad.ADScalar):
        return ad.constant(np.zeros(n), n)
    return ad.ADScalar(np.asarray(v.partials), np.asarray(v.hessian))


def coordinate_function(i: int) -> Callable:
    return lambda u: u[i]


def jacobiator(bracket, f: Callable, g: Callable, h: Callable, point) -> dict:
    """Cyclic sum {f,{g,h}} + c.p. against dω(Y_f, Y_g, Y_h) with Y_F = Π∇F.

    The leaf form is ω = Ω - (β + 𝔅), so dω = -d(β + 𝔅): the right-hand side
    is the twisting 3-form of the reduced bracket evaluated on the Hamiltonian
    fields.
    """
    u = np.asarray(point, dtype=float)
    u1 = ad.seed_array(u)
    P1 = bracket.tensor(u1)
    P = np.asarray(P1.value) if isinstance(P1, ad.ADScalar) else np.asarray(P1)
    if not np.all(np.isfinite(P)):
        raise np.linalg.LinAlgError("degenerate bracket at the point")
    grads = [_grad(F, u) for F in (f, g, h)]
    gads = [_grad_ad(F, u) for F in (f, g, h)]
    lhs = 0.0
    for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        inner = ad.einsum("i,ij,j->", gads[b], P1, gads[c])
        dinner = np.asarray(inner.partials, dtype=float) if isinstance(inner, ad.ADScalar) else np.zeros(len(u))
        lhs += float(grads[a] @ P @ dinner)
    Y = [P @ gr for gr in grads]
    rhs = float(bracket.three_form(u).evaluate(*Y))
    return {"lhs": lhs, "rhs": rhs, "difference": lhs - rhs}


# ---------------------------------------------------------------------------
# time reparameterization


def reparameterized_flow_error(leaf: Leaf, candidate: ConformalCandidate, w0, T: float,
                               samples: int = 50, rtol: float = 1e-11, atol: float = 1e-12) -> float:
    """Compare the flow of X (form ω) with the flow of X/f (form fω) in time τ.

    With dτ = f dt the two trajectories coincide; the integral curve of X/f is
    followed in τ together with t(τ) and compared with the dense output of the
    X-flow at the matching physical times.
    """
    s = leaf.s
    w0 = np.asarray(w0, dtype=float)
    ref = solve_ivp(lambda t, w: leaf.vector_field(w), (0.0, T), w0, method="DOP853",
                    rtol=rtol, atol=atol, dense_output=True)
    if ref.status != 0:
        raise RuntimeError(ref.message)
    sform = scaled_leaf_form(leaf, candidate)

    def rhs(tau, y):
        w = y[:-1]
        fv = candidate.value(w[:s])
        return np.concatenate([leaf.vector_field(w, sform), [1.0 / fv]])

    def reached(tau, y):
        return y[-1] - T
    reached.terminal = True

    tau_max = 10.0 * T * max(1.0, candidate.value(w0[:s])) + 10.0
    rep = solve_ivp(rhs, (0.0, tau_max), np.concatenate([w0, [0.0]]), method="DOP853",
                    rtol=rtol, atol=atol, dense_output=True, events=reached)
    taus = np.linspace(0.0, rep.t[-1], samples)
    worst = 0.0
    for tau in taus:
        y = rep.sol(tau)
        t = min(max(y[-1], 0.0), T)
        worst = max(worst, float(np.max(np.abs(y[:-1] - ref.sol(t)))))
    return worst
