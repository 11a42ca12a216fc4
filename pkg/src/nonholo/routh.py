"""Second reduction step: H-momentum, basic-ness, gauges, leaves and the
nonholonomic Lagrange-Routh equations.

Conventions follow ``compression``: on a leaf with shape chart (x, p̃) the
2-form is ω = Σ dx^i∧dp̃_i - μ_a F^a - 𝔅_μ where F^a_ij = ∂_iĀ^a_j - ∂_jĀ^a_i
(+ bracket term) is the curvature of the mechanical connection and
𝔅_μ(X̄_i, X̄_j) is the twist (JK or JK + B̄) on horizontal lifts.  The
resulting Lagrange-Routh equations read

    ∂𝔏/∂x^i - d/dt ∂𝔏/∂ẋ^i - (d𝔠)_i + μ_b F^b_ij ẋ^j
        - (p̃_j Γ^j_ki + μ_a Γ^a_ki) ẋ^k = 0,     p̃ = ∂𝔏/∂ẋ.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .compression import CompressedSystem, DegenerateForm, geometry
from .forms import CoordinateForm, CoordinateVectorField, contraction, lie_derivative
from .system import MechanicalSystem, PhaseState


class Unsupported(RuntimeError):
    """Configuration outside what the reduction machinery handles."""


class NotBasic(ValueError):
    pass


class GaugeRejected(ValueError):
    pass


@dataclass
class MomentumLevel:
    mu: np.ndarray
    description: str = ""

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))


@dataclass
class GaugeSpec:
    Bbar: CoordinateForm
    max_dynamic_violation: float = float("nan")


def _as_compressed(obj) -> CompressedSystem:
    if isinstance(obj, CompressedSystem):
        return obj
    if isinstance(obj, MechanicalSystem):
        return CompressedSystem(obj)
    raise TypeError("expected a MechanicalSystem or CompressedSystem")


# ---------------------------------------------------------------------------
# generators and momentum


def _generators(system: MechanicalSystem, r):
    """(Z, ∂Z/∂r) lowered like ``geometry``: floats, or order-1 AD in r's variables."""
    m = system.m
    if isinstance(r, ad.ADScalar):
        Zq = system.generators(ad.seed_array(r.value, 2))
        if not isinstance(Zq, ad.ADScalar):
            Zq = ad.constant(Zq, m, 2)
        Z = ad.compose(ad.first_order(Zq), r.partials)
        dZ = ad.compose(ad.gradient_as_ad(Zq), r.partials)
        return Z, dZ
    Zq = system.generators(ad.seed_array(r, 1))
    if not isinstance(Zq, ad.ADScalar):
        return np.asarray(Zq, dtype=float), np.zeros(np.shape(Zq) + (m,))
    return np.asarray(Zq.value), np.asarray(Zq.partials)


def lifted_generator(system: MechanicalSystem, xi) -> CoordinateVectorField:
    """Cotangent lift of ξ_Q̄: (ξ_Q̄(r), -(∂ξ_Q̄/∂r)ᵀ p)."""
    m = system.m
    xi = np.asarray(xi, dtype=float)

    def comp(z):
        r, p = z[:m], z[m:]
        Z, dZ = _generators(system, r)
        v = ad.matmul(Z, xi)
        dv = ad.einsum("ahk,h->ak", dZ, xi)
        pp = -ad.einsum("ak,a->k", dv, p)
        return ad.concatenate([v, pp])

    return CoordinateVectorField(2 * m, comp, name="xi")


def _cotangent_point(system, state) -> np.ndarray:
    if isinstance(state, PhaseState):
        if state.kind != "cotangent":
            raise ValueError("momentum expects a cotangent state")
        m = system.m
        return np.concatenate([state.coords[:m], state.fibers[:m]])
    return np.asarray(state, dtype=float)


def momentum(system, state, xi) -> float:
    """g_ξ = ⟨p, ξ_Q̄⟩ at a point of T*Q̄."""
    system = system.system if isinstance(system, CompressedSystem) else system
    z = _cotangent_point(system, state)
    m = system.m
    Z, _ = _generators(system, z[:m])
    return float(z[m:] @ (np.asarray(Z) @ np.asarray(xi, dtype=float)))


def momentum_drift(compressed, state, xi) -> float:
    """twist(X̄_nh, ξ_T*Q̄): the rate of change of g_ξ along the flow."""
    cs = _as_compressed(compressed)
    z = _cotangent_point(cs.system, state)
    X = cs.hamiltonian_field(z)
    v = lifted_generator(cs.system, xi).at(z)
    return float(cs.twist.at(z).evaluate(X, v))


def sample_cotangent(system: MechanicalSystem, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    r = system.chart.sample(rng, "Qbar")
    return np.concatenate([r, scale * rng.normal(size=system.m)])


@dataclass
class BasicReport:
    verdict: bool
    max_violation: float
    semi_basic_violation: float
    invariance_violation: float


def is_basic(form: CoordinateForm, system, samples: int = 50, tol: float = 1e-10,
             seed: int = 0) -> BasicReport:
    """Semi-basic (i_ξ ω = 0) and invariant (L_ξ ω = 0) along H-generators."""
    system = system.system if isinstance(system, CompressedSystem) else system
    if form.dim != 2 * system.m:
        raise ValueError("form must live on T*Q̄")
    rng = np.random.default_rng(seed)
    nh = system.chart.n_h
    fields = [lifted_generator(system, np.eye(nh)[a]) for a in range(nh)]
    semi = 0.0
    inv = 0.0
    for _ in range(samples):
        z = sample_cotangent(system, rng)
        for f in fields:
            v = f.at(z)
            semi = max(semi, form.at(z).contract(v).max_abs())
            inv = max(inv, lie_derivative(f, form, z).max_abs())
    worst = max(semi, inv)
    return BasicReport(bool(worst < tol), worst, semi, inv)


def apply_gauge(compressed, gauge, samples: int = 100, tol: float = 1e-10,
                seed: int = 0) -> CompressedSystem:
    """Gauge Ω̄ by B̄ after checking i_{X̄_nh}B̄ = 0 and unchanged dynamics."""
    cs = _as_compressed(compressed)
    Bbar = gauge.Bbar if isinstance(gauge, GaugeSpec) else gauge
    if Bbar.dim != 2 * cs.m or Bbar.degree != 2:
        raise ValueError("gauge must be a 2-form on T*Q̄")
    rng = np.random.default_rng(seed)
    gauged = cs.with_gauge(Bbar if cs.gauge is None else cs.gauge + Bbar)
    worst = 0.0
    diff = 0.0
    for _ in range(samples):
        z = sample_cotangent(cs.system, rng)
        X = cs.hamiltonian_field(z)
        worst = max(worst, Bbar.at(z).contract(X).max_abs())
        try:
            Xg = gauged.hamiltonian_field(z)
        except DegenerateForm as exc:
            raise GaugeRejected(f"gauged 2-form is degenerate: {exc}") from exc
        diff = max(diff, float(np.max(np.abs(Xg - X))))
    if worst > tol or diff > tol:
        raise GaugeRejected(f"gauge changes the dynamics: max |i_X B| = {worst:.3e}, "
                            f"max field change = {diff:.3e}")
    if isinstance(gauge, GaugeSpec):
        gauge.max_dynamic_violation = worst
    gauged.gauge_violation = worst
    return gauged


# ---------------------------------------------------------------------------
# mechanical connection


@dataclass
class HConnection:
    """Mechanical connection data at one point (floats or order-1 AD)."""

    kbar: object
    Z: object        # generators, m × h
    I: object        # locked inertia, h × h
    Abar: object     # h × s
    dAbar: object    # h × s × s  (∂_k Ā^a_i stored as [a, i, k])
    Xbar: object     # horizontal lifts, m × s
    kH: object       # horizontal metric, s × s
    dkH: object      # s × s × s
    F: object        # curvature, h × s × s
    U: object
    dU: object       # ∂U/∂r (m,)


def h_connection(system: MechanicalSystem, r) -> HConnection:
    s = system.chart.n_shape
    m = system.m
    g = geometry(system, r)
    Z, dZ = _generators(system, r)
    kb, dkb = g.kbar, g.dkbar
    Ex = np.eye(m)[:, :s]
    I = ad.einsum("ga,gb,bc->ac", Z, kb, Z)
    c = ad.einsum("ag,gi->ai", ad.einsum("ga,gb->ab", Z, kb), Ex)  # κ̄(Z_a, ∂_i)
    Iinv = ad.inv(I)
    Abar = ad.matmul(Iinv, c)
    # ∂_k c and ∂_k I
    dc = ad.einsum("gak,gb,bi->aik", dZ, kb, Ex) + ad.einsum("ga,gbk,bi->aik", Z, dkb, Ex)
    t = ad.einsum("gak,gb,bc->ack", dZ, kb, Z)
    dI = t + ad.einsum("ack->cak", t) + ad.einsum("ga,gbk,bc->ack", Z, dkb, Z)
    dA_r = ad.einsum("ab,bik->aik", Iinv, dc - ad.einsum("bck,ci->bik", dI, Abar))
    dAbar = dA_r[:, :, :s]
    Xbar = Ex - ad.matmul(Z, Abar)
    kH = ad.einsum("gi,gb,bj->ij", Xbar, kb, Xbar)
    # horizontal metric derivative along x (r-partials of Xbar: -dZ Ā - Z dĀ)
    dX = -(ad.einsum("gak,ai->gik", dZ, Abar) + ad.einsum("ga,aik->gik", Z, dA_r))
    t2 = ad.einsum("gik,gb,bj->ijk", dX, kb, Xbar)
    dkH = (t2 + ad.einsum("ijk->jik", t2) + ad.einsum("gi,gbk,bj->ijk", Xbar, dkb, Xbar))[:, :, :s]
    # F^a_ik = ∂_i Ā^a_k - ∂_k Ā^a_i
    F = ad.einsum("aki->aik", dAbar) - dAbar
    cst = system.structure_constants
    if cst is not None and not system.h_abelian:
        F = F + ad.einsum("abc,bi,ck->aik", cst, Abar, Abar)
    return HConnection(kb, Z, I, Abar, dAbar, Xbar, kH, dkH, F, g.U, g.dU)


# ---------------------------------------------------------------------------
# leaves (abelian H acting by translation)


def _require_translation(system: MechanicalSystem):
    if not system.h_abelian or system.h_generators is not None:
        raise Unsupported("leaf charts are implemented for abelian H acting by translation of "
                          "the H-fiber coordinates")


class Leaf:
    """Reduced almost symplectic leaf at level μ in the chart (x, p̃).

    ``twist`` is the (gauged) JK form on T*Q̄ restricted to the level; the
    leaf form is Σ dx∧dp̃ - μ·F - 𝔅_μ.
    """

    def __init__(self, compressed, level, fiber=None, check_basic: bool = True):
        cs = _as_compressed(compressed)
        system = cs.system
        _require_translation(system)
        self.compressed = cs
        self.system = system
        self.mu = MomentumLevel(level).mu if not isinstance(level, MomentumLevel) else level.mu
        if self.mu.shape != (system.chart.n_h,):
            raise ValueError(f"level must have {system.chart.n_h} components")
        self.s = system.chart.n_shape
        self.fiber = np.zeros(system.chart.n_h) if fiber is None else np.asarray(fiber, dtype=float)
        if check_basic:
            rep = is_basic(cs.twist, system, samples=8, tol=1e-8)
            if not rep.verdict:
                raise NotBasic(f"twist form is not basic (violation {rep.max_violation:.3e}); "
                               "apply a gauge first")

    @property
    def dim(self) -> int:
        return 2 * self.s

    def point_r(self, x):
        return ad.concatenate([x, self.fiber])

    def embed(self, w):
        """(x, p̃) ↦ point z = (r, p) of T*Q̄ on the level set."""
        s = self.s
        x, pt = w[:s], w[s:]
        r = self.point_r(x)
        hc = h_connection(self.system, r)
        frame = ad.concatenate([ad.transpose(hc.Xbar), ad.transpose(hc.Z)])  # rows: X̄_i, Z_a
        p = ad.solve(frame, ad.concatenate([pt, self.mu]))
        return ad.concatenate([r, p]), hc

    def _twist_on_horizontal(self, w):
        z, hc = self.embed(w)
        G = self.compressed.twist.components(z)
        m = self.system.m
        mat = [[0.0] * m for _ in range(m)]
        for (a, b), v in G.items():
            mat[a][b] = v
            mat[b][a] = -v
        Gm = ad.stack(mat)
        if not isinstance(Gm, ad.ADScalar) and isinstance(hc.Xbar, ad.ADScalar):
            Gm = ad.constant(Gm, hc.Xbar.n)
        return ad.einsum("gi,gd,dj->ij", hc.Xbar, Gm, hc.Xbar), hc

    def _components(self, parts):
        s = self.s

        def comp(w):
            out = {}
            N, hc = self._twist_on_horizontal(w)
            beta = ad.einsum("a,aij->ij", self.mu, hc.F)
            for i in range(s):
                for j in range(i + 1, s):
                    val = 0.0
                    if "beta" in parts:
                        val = val - beta[i, j]
                    if "bfrak" in parts:
                        val = val - N[i, j]
                    out[(i, j)] = val
            if "canonical" in parts:
                for i in range(s):
                    out[(i, s + i)] = out.get((i, s + i), 0.0) + 1.0
            return out

        return comp

    @property
    def form(self) -> CoordinateForm:
        return CoordinateForm(2, self.dim, self._components({"canonical", "beta", "bfrak"}), "omega_leaf")

    @property
    def beta(self) -> CoordinateForm:
        """β_μ = μ_a F^a (sign: the leaf form subtracts it)."""
        return -CoordinateForm(2, self.dim, self._components({"beta"}), "beta")

    @property
    def bfrak(self) -> CoordinateForm:
        return -CoordinateForm(2, self.dim, self._components({"bfrak"}), "Bfrak")

    @property
    def canonical(self) -> CoordinateForm:
        return CoordinateForm.canonical_symplectic(self.s)

    @property
    def liouville(self) -> CoordinateForm:
        """Θ = Σ p̃_i dx^i (so that -dΘ is the canonical part)."""
        s = self.s

        def comp(w):
            return {(i,): w[s + i] for i in range(s)}

        return CoordinateForm(1, self.dim, comp, "Theta")

    def hamiltonian(self, w) -> float:
        w = np.asarray(w, dtype=float)
        s = self.s
        hc = h_connection(self.system, self.point_r(w[:s]))
        pt = w[s:]
        return (0.5 * float(pt @ np.linalg.solve(hc.kH, pt))
                + 0.5 * float(self.mu @ np.linalg.solve(hc.I, self.mu)) + float(hc.U))

    def dH(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        s = self.s
        wa = ad.seed_array(w)
        hc = h_connection(self.system, self.point_r(wa[:s]))
        pt = wa[s:]
        H = 0.5 * ad.matmul(pt, ad.solve(hc.kH, pt)) + 0.5 * ad.matmul(self.mu, ad.solve(hc.I, self.mu)) + hc.U
        return np.asarray(H.partials, dtype=float)

    def vector_field(self, w, form: Optional[CoordinateForm] = None) -> np.ndarray:
        form = self.form if form is None else form
        W = form.at(np.asarray(w, dtype=float)).matrix()
        return np.linalg.solve(W.T, self.dH(w))

    def from_compressed(self, z) -> np.ndarray:
        """Leaf coordinates (x, p̃) of a point of T*Q̄ (p̃_i = p(X̄_i))."""
        z = np.asarray(z, dtype=float)
        s, m = self.s, self.system.m
        hc = h_connection(self.system, z[:m])
        return np.concatenate([z[:s], np.asarray(hc.Xbar).T @ z[m:]])


def reduced_two_form(compressed, level, point) -> dict:
    """Coefficients of the leaf 2-form at a leaf point (x, p̃)."""
    leaf = Leaf(compressed, level)
    val = leaf.form.at(np.asarray(point, dtype=float))
    if abs(np.linalg.det(val.matrix())) < 1e-300:
        raise DegenerateForm("leaf 2-form is degenerate at the point")
    return dict(val.coeffs)


# ---------------------------------------------------------------------------
# Routh data and the Lagrange-Routh residual


class RouthData:
    """Reduced Lagrangian, amended potential and Γ arrays at a momentum level.

    Every method takes the shape point x and, optionally, the H-fiber
    coordinates (only needed for nonabelian H).
    """

    def __init__(self, compressed, level, check_basic: bool = True, samples: int = 8):
        cs = _as_compressed(compressed)
        self.compressed = cs
        self.system = cs.system
        self.mu = level.mu if isinstance(level, MomentumLevel) else np.atleast_1d(np.asarray(level, float))
        if self.mu.shape != (self.system.chart.n_h,):
            raise ValueError(f"level must have {self.system.chart.n_h} components")
        self.s = self.system.chart.n_shape
        self.basic = None
        if check_basic:
            rep = is_basic(cs.twist, self.system, samples=samples, tol=1e-8)
            self.basic = rep
            if not rep.verdict:
                raise NotBasic(f"twist form is not basic (violation {rep.max_violation:.3e}); "
                               "apply a gauge first")

    def _r(self, x, fiber):
        fiber = np.zeros(self.system.chart.n_h) if fiber is None else np.asarray(fiber, dtype=float)
        return np.concatenate([np.asarray(x, dtype=float), fiber])

    def connection(self, x, fiber=None) -> HConnection:
        return h_connection(self.system, self._r(x, fiber))

    def reduced_lagrangian(self, x, xdot, fiber=None) -> float:
        hc = self.connection(x, fiber)
        xdot = np.asarray(xdot, dtype=float)
        return 0.5 * float(xdot @ hc.kH @ xdot) - float(hc.U)

    def amended(self, x, fiber=None) -> float:
        hc = self.connection(x, fiber)
        return 0.5 * float(self.mu @ np.linalg.solve(hc.I, self.mu))

    def d_amended(self, x, fiber=None) -> np.ndarray:
        """(d𝔠)_i = X̄_i(𝔠)."""
        r = ad.seed_array(self._r(x, fiber))
        hc = h_connection(self.system, r)
        c = 0.5 * ad.matmul(self.mu, ad.solve(hc.I, self.mu))
        return np.asarray(hc.Xbar.value).T @ np.asarray(c.partials)

    def velocity_split(self, r, rdot):
        """(ẋ, ξ) with ṙ = X̄ẋ + Zξ."""
        hc = h_connection(self.system, np.asarray(r, dtype=float))
        frame = np.hstack([np.asarray(hc.Xbar), np.asarray(hc.Z)])
        sol = np.linalg.solve(frame, np.asarray(rdot, dtype=float))
        return sol[: self.s], sol[self.s:]

    def routhian(self, r, rdot) -> float:
        """R^μ(ṙ) = l(ṙ) - ⟨μ, ξ(ṙ)⟩ on TQ̄."""
        _, xi = self.velocity_split(r, rdot)
        return self.compressed.lagrangian(r, rdot) - float(self.mu @ xi)

    def level_velocity(self, x, xdot, fiber=None) -> np.ndarray:
        """ṙ on the level set: X̄ẋ + Z I⁻¹μ."""
        hc = self.connection(x, fiber)
        return np.asarray(hc.Xbar) @ np.asarray(xdot, dtype=float) + np.asarray(hc.Z) @ np.linalg.solve(hc.I, self.mu)

    def twist_matrix(self, x, ptilde, mu=None, fiber=None) -> np.ndarray:
        """N_ij = twist(X̄_i, X̄_j) at the level point with momenta (p̃, μ)."""
        mu = self.mu if mu is None else np.asarray(mu, dtype=float)
        r = self._r(x, fiber)
        hc = h_connection(self.system, r)
        frame = np.vstack([np.asarray(hc.Xbar).T, np.asarray(hc.Z).T])
        p = np.linalg.solve(frame, np.concatenate([np.asarray(ptilde, float), mu]))
        m = self.system.m
        W = self.compressed.twist.at(np.concatenate([r, p])).matrix()[:m, :m]
        Xb = np.asarray(hc.Xbar)
        return Xb.T @ W @ Xb

    def gamma_B(self, x, fiber=None):
        """(Γ_B)^j_ki = ∂N_ki/∂p̃_j and (Γ_B)^a_ki = ∂N_ki/∂μ_a (N is linear)."""
        # one AD pass seeded along (p̃, μ); N is linear so its partials are Γ_B
        s, h = self.s, len(self.mu)
        m = self.system.m
        r = self._r(x, fiber)
        hc = h_connection(self.system, r)
        Xb = np.asarray(hc.Xbar)
        frame = np.vstack([Xb.T, np.asarray(hc.Z).T])
        jac = np.zeros((2 * m, s + h))
        jac[m:] = np.linalg.inv(frame)
        z = ad.ADScalar(np.concatenate([r, np.zeros(m)]), jac)
        comps = self.compressed.twist.components(z)
        W = np.zeros((m, m, s + h))
        for (a, b), v in comps.items():
            if a < m and b < m and isinstance(v, ad.ADScalar):
                W[a, b] = v.partials
                W[b, a] = -v.partials
        N = np.einsum("gi,gdn,dj->nij", Xb, W, Xb)
        return N[:s], N[s:]

    def D_arrays(self, x, fiber=None):
        """D^l_ki and D^a_ki from the constraint curvature on horizontal lifts.

        With M_αβ(ṙ) = ṙ^γ κ(X_γ,Z_B) K^B_αβ the JK twist on horizontal lifts is
        -M(X̄_k, X̄_i); splitting ṙ = X̄ κ̄_H⁻¹p̃ + Z I⁻¹μ and C = half of K gives
        D^l_ki = -(κ̄_H⁻¹)^{lj} X̄_j^γ κ_γB C^B(X̄_k, X̄_i) and the analogue with Z, I.
        """
        r = self._r(x, fiber)
        g = geometry(self.system, r)
        hc = h_connection(self.system, r)
        Xb, Z = np.asarray(hc.Xbar), np.asarray(hc.Z)
        CXX = np.einsum("bcd,ck,di->bki", np.asarray(g.C), Xb, Xb)
        Dl = -np.einsum("lj,gj,gb,bki->lki", np.linalg.inv(hc.kH), Xb, g.kgA, CXX)
        Da = -np.einsum("ab,gb,gc,cki->aki", np.linalg.inv(hc.I), Z, g.kgA, CXX)
        return Dl, Da

    def gamma(self, x, fiber=None):
        """Γ = D_ki - D_ik for the ungauged JK."""
        Dl, Da = self.D_arrays(x, fiber)
        return Dl - np.swapaxes(Dl, 1, 2), Da - np.swapaxes(Da, 1, 2)

    def lr_residual(self, x, xdot, xddot, fiber=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xdot = np.asarray(xdot, dtype=float)
        xddot = np.asarray(xddot, dtype=float)
        hc = self.connection(x, fiber)
        kH, dkH = np.asarray(hc.kH), np.asarray(hc.dkH)
        dLdx = 0.5 * np.einsum("i,ijk,j->k", xdot, dkH, xdot) - np.asarray(hc.Xbar).T @ np.asarray(hc.dU)
        ddt = kH @ xddot + np.einsum("ijk,k,j->i", dkH, xdot, xdot)
        pt = kH @ xdot
        F = np.asarray(hc.F)
        Gs, Ga = self.gamma_B(x, fiber)
        twist = np.einsum("j,jki->ki", pt, Gs) + np.einsum("a,aki->ki", self.mu, Ga)
        curv = np.einsum("b,bij,j->i", self.mu, F, xdot)
        return dLdx - ddt - self.d_amended(x, fiber) + curv - np.einsum("ki,k->i", twist, xdot)

    def orbit_velocity(self, x, xdot, fiber) -> np.ndarray:
        """Velocities of the H-fiber coordinates on the level set (second-order condition)."""
        v = self.level_velocity(x, xdot, fiber)
        return v[self.s:]


def routh_data(compressed, level, check_basic: bool = True) -> RouthData:
    return RouthData(compressed, level, check_basic=check_basic)


def lagrange_routh_residual(routh: RouthData, jet, fiber=None, fiber_rates=None) -> np.ndarray:
    """Residual of the reduced equations at a jet (x, ẋ, ẍ).

    If the H-fiber coordinates and their rates are given, the residual of the
    second-order condition (fiber rates vs. those implied by the level) is
    appended.
    """
    x, xdot, xddot = jet
    res = routh.lr_residual(x, xdot, xddot, fiber)
    if fiber is not None and fiber_rates is not None:
        res = np.concatenate([res, np.asarray(fiber_rates, float) - routh.orbit_velocity(x, xdot, fiber)])
    return res
