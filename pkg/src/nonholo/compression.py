"""Chaplygin compression: curvature of the constraint connection, the
momentum-paired curvature 2-form JK on T*Q̄ and the compressed dynamics.

Sign conventions used throughout the package:

* canonical form on T*Q̄ is Ω = Σ dr^α ∧ dp_α,
* JK = -Σ_{α<β} ṙ^γ κ(X_γ, Z_B) K^B_{αβ} dr^α ∧ dr^β with ṙ = κ̄⁻¹p,
* the compressed 2-form is Ω̄ = Ω - JK and the dynamics solves i_X Ω̄ = dH.

On the tangent side this is κ̄ r̈ = ∂l/∂r - (∂κ̄·ṙ)ṙ - M ṙ with
M_αβ = ṙ^γ κ(X_γ, Z_B) K^B_αβ.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from .forms import CoordinateForm, FormValue
from .system import MechanicalSystem, PhaseState, SingularMetric

COND_LIMIT = 1e12


class DegenerateForm(ArithmeticError):
    """Raised when Ω̄ (or a gauged variant) is numerically singular."""


@dataclass
class CurvatureData:
    C: np.ndarray
    K: np.ndarray


@dataclass
class Geometry:
    """Compressed geometric data at one point of Q̄.

    With a plain point every entry is a float array.  If the point was an
    order-1 ADScalar the entries are order-1 ADScalars in the same outer
    variables (derivative entries included), which is what exterior
    derivatives of JK need.
    """

    kbar: object      # κ̄_αβ
    dkbar: object     # ∂κ̄_αβ/∂r^γ  (m, m, m)
    kgA: object       # κ(X_γ, Z_B)   (m, k)
    C: object         # C^B_αβ       (k, m, m)
    K: object
    U: object
    dU: object        # ∂U/∂r        (m,)


def _value_partials(x, shape, n):
    if isinstance(x, ad.ADScalar):
        return np.asarray(x.value, dtype=float), np.asarray(x.partials, dtype=float)
    return np.asarray(x, dtype=float).reshape(shape), np.zeros(shape + (n,))


def _geometry_plain(system: MechanicalSystem, r) -> Geometry:
    """Plain-point geometry with explicit first derivatives (the integrator path)."""
    m, n, k = system.m, system.n, system.k
    if system.jet is not None:
        kap, dkap, A, dA = system.jet(system.full_point(r))
        if system.potential is None:
            U, dU = 0.0, np.zeros(n)
        else:
            U, dU = _value_partials(system.U(ad.seed_array(system.full_point(r), 1)), (), n)
    else:
        q = ad.seed_array(system.full_point(r), 1)
        kap, dkap = _value_partials(system.metric(q), (n, n), n)
        U, dU = _value_partials(system.U(q), (), n)
        if k:
            A, dA = _value_partials(system.connection(q), (k, m), n)
        else:
            A, dA = np.zeros((0, m)), np.zeros((0, m, n))
    X = np.empty((n, m))
    X[:m] = np.eye(m)
    X[m:] = -A
    kX = kap @ X
    kbar = X.T @ kX
    # ∂_k κ̄_ab = (∂_k X)ᵀκX + Xᵀκ ∂_k X + Xᵀ ∂_kκ X; only the s-rows of X vary
    t = (kX[m:].T @ (-dA[:, :, :m]).reshape(k, m * m)).reshape(m, m, m)  # [b, a, k]
    dkbar = t.transpose(1, 0, 2) + t
    if dkap.any():
        dkbar = dkbar + (X.T @ dkap[:, :, :m].transpose(2, 0, 1) @ X).transpose(1, 2, 0)
    kgA = X.T @ kap[:, m:]
    # C^B_αβ = ∂_β A^B_α + A^D_α ∂A^B_β/∂s^D
    C = dA[:, :, :m] + (dA[:, :, m:] @ A).transpose(0, 2, 1)
    K = C - C.transpose(0, 2, 1)
    return Geometry(kbar, dkbar, kgA, C, K, float(U), dU[:m])


def geometry(system: MechanicalSystem, r) -> Geometry:
    if not isinstance(r, ad.ADScalar):
        return _geometry_plain(system, r)
    if r.hessian is not None:
        raise ValueError("geometry accepts plain or first-order points only")
    m, n = system.m, system.n
    # second-order seed in q, then compose with the Jacobian of the outer point
    jac = np.zeros((n, r.n))
    jac[:m] = r.partials
    q = ad.seed_array(system.full_point(np.asarray(r.value, dtype=float)), 2)
    kappa = system.metric(q)
    A = system.connection(q)
    U = system.U(q)
    if not isinstance(A, ad.ADScalar):
        A = ad.constant(A, n, 2)
    if not isinstance(U, ad.ADScalar):
        U = ad.constant(U, n, 2)
    X, _ = system.frame(q)
    kX = ad.matmul(kappa, X)
    kbar = ad.matmul(ad.transpose(X), kX)
    kcol = kappa[:, m:] if system.k else ad.constant(np.zeros((n, 0)), n, 2)
    kgA = ad.matmul(ad.transpose(X), kcol)

    def low(x):
        return ad.compose(ad.first_order(x), jac)

    def dlow(x):
        return ad.compose(ad.gradient_as_ad(x), jac)

    A_l = low(A)
    dA = dlow(A)
    # C^B_αβ = ∂_β A^B_α + A^D_α ∂A^B_β/∂s^D
    C = dA[:, :, :m] + ad.einsum("da,bcd->bac", A_l, dA[:, :, m:])
    K = C - ad.einsum("bac->bca", C)
    return Geometry(low(kbar), dlow(kbar)[:, :, :m], low(kgA), C, K, low(U), dlow(U)[:m])


def curvature(system: MechanicalSystem, point) -> CurvatureData:
    """C and K at a point of Q (or Q̄; G_W-fiber coordinates are ignored)."""
    point = np.asarray(point, dtype=float)
    g = geometry(system, point[: system.m])
    return CurvatureData(np.asarray(g.C), np.asarray(g.K))


def jk_matrix_lagrangian(geom: Geometry, rdot):
    """M_αβ = ṙ^γ κ(X_γ,Z_B) K^B_αβ; JK = -Σ_{α<β} M_αβ dr^α∧dr^β."""
    return ad.einsum("g,gb,bij->ij", rdot, geom.kgA, geom.K)


def _split(z, m):
    return z[:m], z[m:]


def _jk_components(system: MechanicalSystem):
    m = system.m

    def comps(z):
        r, p = _split(z, m)
        g = geometry(system, r)
        rdot = ad.matmul(ad.inv(g.kbar), p)
        M = jk_matrix_lagrangian(g, rdot)
        out = {}
        for a in range(m):
            for b in range(a + 1, m):
                out[(a, b)] = -M[a, b]
        return out

    return comps


def jk_form(system: MechanicalSystem) -> CoordinateForm:
    """JK as a 2-form on T*Q̄ with coordinates z = (r, p)."""
    return CoordinateForm(2, 2 * system.m, _jk_components(system), name="JK")


def jk_two_form(system: MechanicalSystem, state: PhaseState) -> FormValue:
    """Value of JK at a cotangent state of Q̄ (or a constrained state of Q)."""
    if state.kind != "cotangent":
        raise ValueError("jk_two_form expects a cotangent state")
    if state.space == "Q":
        if not state.is_constrained(system):
            raise ValueError("state is not in the constrained momentum space")
        z = np.concatenate([state.coords[: system.m], state.fibers[: system.m]])
    else:
        z = state.as_vector()
    return jk_form(system).at(z)


def canonical_form(m: int) -> CoordinateForm:
    return CoordinateForm.canonical_symplectic(m)


@dataclass
class CompressedSystem:
    """The compressed system on TQ̄ / T*Q̄, optionally with a gauge 2-form."""

    system: MechanicalSystem
    gauge: Optional[CoordinateForm] = None
    gauge_violation: float = 0.0
    _jk: Optional[CoordinateForm] = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.system.m

    @property
    def jk_form(self) -> CoordinateForm:
        if self._jk is None:
            self._jk = jk_form(self.system)
        return self._jk

    @property
    def twist(self) -> CoordinateForm:
        """JK, or JK + B̄ when gauged."""
        if self.gauge is None:
            return self.jk_form
        return self.jk_form + self.gauge

    @property
    def omega_bar(self) -> CoordinateForm:
        return canonical_form(self.m) - self.twist

    def with_gauge(self, gauge: Optional[CoordinateForm], violation: float = 0.0) -> "CompressedSystem":
        return replace(self, gauge=gauge, gauge_violation=violation)

    def lagrangian(self, r, rdot) -> float:
        g = geometry(self.system, r)
        rdot = np.asarray(rdot, dtype=float)
        return 0.5 * float(rdot @ g.kbar @ rdot) - float(g.U)

    def hamiltonian(self, z) -> float:
        z = np.asarray(z, dtype=float)
        r, p = _split(z, self.m)
        g = geometry(self.system, r)
        return 0.5 * float(p @ np.linalg.solve(g.kbar, p)) + float(g.U)

    def dH(self, z) -> np.ndarray:
        r, p = _split(np.asarray(z, dtype=float), self.m)
        g = geometry(self.system, r)
        v = np.linalg.solve(g.kbar, p)
        dr = -0.5 * np.einsum("a,abg,b->g", v, g.dkbar, v) + g.dU
        return np.concatenate([dr, v])

    def tangent_field(self, r, rdot) -> np.ndarray:
        """(ṙ, r̈) from the compressed Euler-Lagrange equations."""
        r = np.asarray(r, dtype=float)
        rdot = np.asarray(rdot, dtype=float)
        g = geometry(self.system, r)
        m = len(rdot)
        dk_v = g.dkbar @ rdot                     # [a, b] = ∂_g κ̄_ab ṙ^g
        dl = 0.5 * (rdot @ g.dkbar.reshape(m, -1)).reshape(m, m).T @ rdot - g.dU
        kdot = dk_v @ rdot
        k = g.K.shape[0]
        M = ((rdot @ g.kgA) @ g.K.reshape(k, -1)).reshape(m, m) if k else np.zeros((m, m))
        rhs = dl - kdot - M @ rdot
        return np.concatenate([rdot, _solve_checked(g.kbar, rhs, "compressed metric")])

    def hamiltonian_field(self, z, form: Optional[CoordinateForm] = None) -> np.ndarray:
        """Solve i_X ω = dH for X with ω = Ω̄ (or the gauged form)."""
        z = np.asarray(z, dtype=float)
        form = self.omega_bar if form is None else form
        W = form.at(z).matrix()
        _check_cond(W, "2-form")
        return np.linalg.solve(W.T, self.dH(z))

    def legendre(self, r, rdot) -> np.ndarray:
        g = geometry(self.system, r)
        return np.asarray(g.kbar) @ np.asarray(rdot, dtype=float)

    def velocity(self, r, p) -> np.ndarray:
        g = geometry(self.system, r)
        return np.linalg.solve(g.kbar, np.asarray(p, dtype=float))


def _solve_checked(M, b, what):
    try:
        x = np.linalg.solve(M, b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateForm(f"{what} is singular at the state") from exc
    if not np.all(np.isfinite(x)):
        raise DegenerateForm(f"{what} is singular at the state")
    return x


def _check_cond(M, what):
    c = np.linalg.cond(M)
    if not np.isfinite(c) or c > COND_LIMIT:
        raise DegenerateForm(f"{what} is singular at the state (condition number {c:.3e})")


def compress(system: MechanicalSystem) -> CompressedSystem:
    return CompressedSystem(system)


def compressed_vector_field(system, state: PhaseState) -> np.ndarray:
    """Compressed dynamics at a state on TQ̄ (tangent) or T*Q̄ (cotangent).

    ``system`` may be a MechanicalSystem or a (possibly gauged)
    CompressedSystem.  Tangent states return (ṙ, r̈); cotangent states return
    (ṙ, ṗ).
    """
    cs = system if isinstance(system, CompressedSystem) else CompressedSystem(system)
    m = cs.m
    coords = state.coords[:m]
    fib = state.fibers[:m]
    if state.space == "Q" and not state.is_constrained(cs.system):
        raise ValueError("state is not constrained")
    if state.kind == "tangent":
        return cs.tangent_field(coords, fib)
    try:
        return cs.hamiltonian_field(np.concatenate([coords, fib]))
    except np.linalg.LinAlgError as exc:
        raise SingularMetric(str(exc)) from exc
